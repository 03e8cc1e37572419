"""Stratified bootstrap, jackknife, bootstrap intervals and resampling MI.

Each bootstrap replicate or imputation ``b`` draws from its own generator
``default_rng([seed, b])``, so results do not depend on how replicates are
batched or scheduled.

Bootstrap and jackknife replicates are represented as per-row multiplicity
weights (resample counts times design weight). A weighted fit with integer
counts is the same estimator as a fit on the duplicated rows, and it lets
GLM replicates be fitted as one batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .calibration import Dataset, calibrate, fit_stage1, fit_stage2
from .errors import DomainError, NumericalError
from .models import (BINOMIAL, COXPH, GAUSSIAN, fit_gaussian_batch, fit_glm_gaussian,
                     fit_logistic_batch)
from .sandwich import naive_variance
from .survey import SurveyDesign

log = logging.getLogger(__name__)

MAD_SCALE = 1.4826
MI_FAILURE_CAP = 0.10
JACKKNIFE_MAX_N = 2000
JACKKNIFE_GROUPS = 200
_BATCH_CELLS = 4_000_000


@dataclass(frozen=True)
class BootstrapDraws:
    estimates: np.ndarray
    n_failed: int
    seed: int
    B: int
    replicate_index: np.ndarray

    @property
    def se(self) -> np.ndarray:
        return self.estimates.std(axis=0, ddof=1)


@dataclass(frozen=True)
class BootstrapIntervals:
    level: float
    se: np.ndarray
    wald: np.ndarray | None
    percentile: np.ndarray | None
    bca: np.ndarray | None
    z0: np.ndarray | None = None
    acceleration: np.ndarray | None = None


@dataclass(frozen=True)
class MIResult:
    estimates: np.ndarray
    within_vars: np.ndarray
    v_star: np.ndarray
    robust_v_star: np.ndarray
    M: int
    n_failed: int = 0

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.v_star)

    @property
    def robust_se(self) -> np.ndarray:
        return np.sqrt(self.robust_v_star)


def _weights(data: Dataset) -> np.ndarray:
    return np.ones(len(data)) if data.weight is None else np.asarray(data.weight, float)


def bootstrap_indices(data: Dataset, b: int, seed: int) -> np.ndarray:
    """Row indices of replicate ``b``: n draws from the subset, N - n from the rest."""
    sub = np.flatnonzero(data.subset)
    non = np.flatnonzero(~data.subset)
    rng = np.random.default_rng([seed, b])
    picks = [rng.choice(sub, size=sub.size, replace=True)]
    if non.size:
        picks.append(rng.choice(non, size=non.size, replace=True))
    return np.concatenate(picks)


def _two_stage_batch(data: Dataset, kind: str, W: np.ndarray, start=None):
    """Refit both stages under each row of the weight matrix ``W`` (B x N)."""
    sub = data.subset
    S1 = data.stage1_matrix()
    B = W.shape[0]
    X1 = np.broadcast_to(S1[sub], (B,) + S1[sub].shape)
    y1 = np.broadcast_to(data.xstarstar[sub], (B, int(sub.sum())))
    alpha, ok1 = fit_gaussian_batch(X1, y1, W[:, sub])
    alpha = np.where(ok1[:, None], alpha, 0.0)
    xhat = alpha @ S1.T
    N = len(data)
    X2 = np.empty((B, N, 2 + data.z.shape[1]))
    X2[:, :, 0] = 1.0
    X2[:, :, 1] = xhat
    X2[:, :, 2:] = data.z
    y = np.broadcast_to(data.y, (B, N))
    if kind == BINOMIAL:
        beta, ok2 = fit_logistic_batch(X2, y, W, start=start)
    else:
        beta, ok2 = fit_gaussian_batch(X2, y, W)
    ok = ok1 & ok2
    beta[~ok] = np.nan
    return beta, ok


def _refit_one(data: Dataset, kind: str, idx) -> np.ndarray:
    rep = data.take(idx)
    design = rep.design()
    stage1 = fit_stage1(rep, design)
    return fit_stage2(rep, design, calibrate(stage1, rep), kind).coefficients


def _chunks(total, N, k):
    size = max(1, _BATCH_CELLS // max(1, N * k))
    for lo in range(0, total, size):
        yield lo, min(total, lo + size)


def stratified_bootstrap(data: Dataset, B: int, seed: int, stage2_kind: str = BINOMIAL,
                         batched: bool = True, start=None) -> BootstrapDraws:
    if B < 2:
        raise DomainError("bootstrap needs B >= 2")
    if data.n_subset == 0 or data.n_subset == len(data):
        raise DomainError("stratified bootstrap needs both subset and non-subset rows")
    N = len(data)
    k = data.z.shape[1] + (1 if stage2_kind == COXPH else 2)
    est = np.full((B, k), np.nan)
    ok = np.zeros(B, dtype=bool)
    if batched and stage2_kind in (BINOMIAL, GAUSSIAN):
        w = _weights(data)
        for lo, hi in _chunks(B, N, k):
            W = np.stack([np.bincount(bootstrap_indices(data, b, seed), minlength=N)
                          for b in range(lo, hi)]).astype(float) * w
            est[lo:hi], ok[lo:hi] = _two_stage_batch(data, stage2_kind, W, start=start)
    else:
        for b in range(B):
            try:
                est[b] = _refit_one(data, stage2_kind, bootstrap_indices(data, b, seed))
                ok[b] = True
            except NumericalError as exc:
                log.debug("bootstrap replicate %d failed: %s", b, exc)
    if not ok.any():
        raise NumericalError("all bootstrap replicates failed")
    return BootstrapDraws(estimates=est[ok], n_failed=int(B - ok.sum()), seed=seed, B=B,
                          replicate_index=np.flatnonzero(ok))


def jackknife_estimates(data: Dataset, stage2_kind: str = BINOMIAL) -> np.ndarray:
    """Leave-one-out (or grouped, above ``JACKKNIFE_MAX_N`` rows) two-stage estimates.

    Deleting a subset row also removes it from stage 1.
    """
    N = len(data)
    if N <= JACKKNIFE_MAX_N:
        groups = np.arange(N)
    else:
        groups = np.arange(N) % JACKKNIFE_GROUPS
    G = groups.max() + 1
    k = data.z.shape[1] + (1 if stage2_kind == COXPH else 2)
    w = _weights(data)
    est = np.full((G, k), np.nan)
    ok = np.zeros(G, dtype=bool)
    if stage2_kind in (BINOMIAL, GAUSSIAN):
        for lo, hi in _chunks(G, N, k):
            W = np.where(groups[None, :] == np.arange(lo, hi)[:, None], 0.0, w[None, :])
            est[lo:hi], ok[lo:hi] = _two_stage_batch(data, stage2_kind, W)
    else:
        for g in range(G):
            try:
                est[g] = _refit_one(data, stage2_kind, np.flatnonzero(groups != g))
                ok[g] = True
            except NumericalError:
                pass
    if not ok.all():
        log.warning("%d jackknife refits failed and were dropped", int((~ok).sum()))
    return est[ok]


def _type7(x, probs):
    return np.quantile(x, probs, axis=0, method="linear")


def acceleration_from_jackknife(jk) -> np.ndarray:
    jk = np.atleast_2d(np.asarray(jk, float))
    d = jk.mean(axis=0) - jk
    num = np.sum(d**3, axis=0)
    den = 6.0 * np.sum(d**2, axis=0) ** 1.5
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(den > 0, num / den, 0.0)
    return a


def bca_interval(draws, point, acceleration, level=0.95):
    """BCa interval for one coefficient."""
    draws = np.asarray(draws, float)
    frac = np.mean(draws < point)
    if frac <= 0.0 or frac >= 1.0:
        raise NumericalError("BCa bias constant is infinite: all draws on one side of the estimate")
    z0 = norm.ppf(frac)
    zq = norm.ppf([(1 - level) / 2, (1 + level) / 2])
    adj = norm.cdf(z0 + (z0 + zq) / (1 - acceleration * (z0 + zq)))
    return _type7(draws, adj), z0


def bootstrap_intervals(draws: BootstrapDraws, point, level: float = 0.95, jackknife=None,
                        types=("wald", "percentile", "bca")) -> BootstrapIntervals:
    """Wald, percentile and BCa intervals; BCa needs jackknife estimates."""
    if not 0 < level < 1:
        raise DomainError("level must be in (0, 1)")
    est = np.atleast_2d(draws.estimates)
    point = np.atleast_1d(np.asarray(point, float))
    se = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.zeros(est.shape[1])
    alpha = 1 - level
    wald = perc = bca = z0 = acc = None
    if "wald" in types:
        if np.any(se <= 0):
            raise NumericalError("bootstrap draws have zero spread; Wald interval undefined")
        z = norm.ppf(1 - alpha / 2)
        wald = np.column_stack([point - z * se, point + z * se])
    if "percentile" in types:
        perc = _type7(est, [alpha / 2, 1 - alpha / 2]).T
    if "bca" in types and jackknife is not None:
        acc = acceleration_from_jackknife(jackknife)
        out = [bca_interval(est[:, c], point[c], acc[c], level) for c in range(est.shape[1])]
        bca = np.array([o[0] for o in out])
        z0 = np.array([o[1] for o in out])
    return BootstrapIntervals(level=level, se=se, wald=wald, percentile=perc, bca=bca, z0=z0,
                              acceleration=acc)


def combine_mi(estimates, within_vars, rubin: bool = False):
    """Return (v_star, robust_v_star) from per-imputation estimates and variances."""
    est = np.atleast_2d(np.asarray(estimates, float))
    wv = np.atleast_2d(np.asarray(within_vars, float))
    M = est.shape[0]
    if M < 2:
        raise DomainError("combining needs at least 2 imputations")
    factor = 1.0 + 1.0 / M if rubin else 1.0
    between = est.var(axis=0, ddof=1)
    v_star = wv.mean(axis=0) + factor * between
    med = np.median(est, axis=0)
    mad = MAD_SCALE * np.median(np.abs(est - med), axis=0)
    robust = np.median(wv, axis=0) + factor * mad**2
    return v_star, robust


def mi_variance(data: Dataset, design: SurveyDesign | None = None, M: int = 25, seed: int = 0,
                stage2_kind: str = BINOMIAL, rubin: bool = False) -> MIResult:
    """Resampling MI: refit stage 1 on a bootstrap of the subset, recalibrate,
    refit stage 2 with design weights, combine."""
    if M < 2:
        raise DomainError("MI needs M >= 2")
    design = data.design() if design is None else design
    sub = np.flatnonzero(data.subset)
    S1 = data.stage1_matrix()
    k = data.z.shape[1] + (1 if stage2_kind == COXPH else 2)
    est, wv = [], []
    failed = 0
    for m in range(M):
        rng = np.random.default_rng([seed, m])
        idx = rng.choice(sub, size=sub.size, replace=True)
        try:
            stage1 = fit_glm_gaussian(S1[idx], data.xstarstar[idx], design.weight[idx])
            xhat = calibrate(stage1, data)
            stage2 = fit_stage2(data, design, xhat, stage2_kind)
            v = np.diag(naive_variance(stage2, design))
        except NumericalError as exc:
            failed += 1
            log.debug("imputation %d failed: %s", m, exc)
            if failed > MI_FAILURE_CAP * M:
                raise NumericalError(f"{failed} of {M} imputations failed") from exc
            continue
        est.append(stage2.coefficients)
        wv.append(v)
    est = np.array(est).reshape(-1, k)
    wv = np.array(wv).reshape(-1, k)
    v_star, robust = combine_mi(est, wv, rubin=rubin)
    return MIResult(est, wv, v_star, robust, M, failed)
