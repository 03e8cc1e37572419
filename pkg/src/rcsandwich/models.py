"""Weighted gaussian, logistic and Cox proportional-hazards fits.

Every fit returns a :class:`ModelFit` holding the per-observation weighted
score contributions (``estfun``) and the negative Jacobian of their sum
(``information``). Both are on the estimating-equation scale: for the gaussian
model the score is ``w * (y - x'a) * x`` with no division by the residual
variance, so ``information = X'WX``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DivergenceError, DomainError, SingularSystemError

TOL_COEF = 1e-10
MAX_ITER = 50
DIVERGENCE_NORM = 1e3

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"
COXPH = "coxph"
KINDS = (GAUSSIAN, BINOMIAL, COXPH)


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurvivalOutcome:
    """Right-censored outcome: event/censoring time, event flag, optional strata."""

    time: np.ndarray
    status: np.ndarray
    strata: np.ndarray | None = None

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        status = np.asarray(self.status)
        if time.ndim != 1 or status.shape != time.shape:
            raise DomainError("time and status must be 1-d arrays of equal length")
        if np.any(~np.isfinite(time)) or np.any(time <= 0):
            raise DomainError("survival times must be finite and > 0")
        if not np.all(np.isin(status, (0, 1))):
            raise DomainError("status must be 0/1")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status.astype(int))
        if self.strata is not None:
            strata = np.asarray(self.strata)
            if strata.shape != time.shape:
                raise DomainError("strata length mismatch")
            object.__setattr__(self, "strata", strata)

    def __len__(self):
        return len(self.time)

    def take(self, idx):
        return SurvivalOutcome(
            self.time[idx], self.status[idx], None if self.strata is None else self.strata[idx]
        )


@dataclass(frozen=True)
class ModelFit:
    kind: str
    coefficients: np.ndarray
    naive_cov: np.ndarray
    estfun: np.ndarray
    weights: np.ndarray
    dispersion: float
    linear_predictor: np.ndarray
    converged: bool
    iterations: int
    information: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("coefficients", "naive_cov", "estfun", "weights", "linear_predictor", "information"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_obs(self) -> int:
        return self.estfun.shape[0]

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.naive_cov))

    def unweighted_estfun(self) -> np.ndarray:
        """Score rows with the prior weights divided back out (zero where weight is 0)."""
        w = self.weights
        out = np.zeros_like(self.estfun)
        pos = w > 0
        out[pos] = self.estfun[pos] / w[pos, None]
        return out


def _check_weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise DomainError(f"weights must have length {n}, got shape {w.shape}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise DomainError("weights must be finite and nonnegative")
    return w


def _check_design(X, w):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DomainError("design matrix must be 2-d")
    if np.any(~np.isfinite(X)):
        raise DomainError("design matrix has non-finite entries")
    pos = w > 0
    p = X.shape[1]
    if pos.sum() < p:
        raise SingularSystemError(f"need at least {p} positively weighted rows, got {pos.sum()}")
    Xw = X[pos] * np.sqrt(w[pos])[:, None]
    if np.linalg.matrix_rank(Xw) < p:
        raise SingularSystemError("design matrix is rank deficient")
    return X


def _inv_spd(M, what="information"):
    try:
        c = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"{what} matrix is not positive definite") from exc
    ci = np.linalg.inv(c)
    inv = ci.T @ ci
    return (inv + inv.T) / 2


def _small_step(delta, beta):
    return np.max(np.abs(delta)) <= TOL_COEF * (1.0 + np.max(np.abs(beta)))


# --------------------------------------------------------------------------- gaussian


def fit_glm_gaussian(design_matrix, response, weights=None) -> ModelFit:
    X = np.asarray(design_matrix, dtype=float)
    y = np.asarray(response, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise DomainError("response length does not match design matrix")
    w = _check_weights(weights, n)
    X = _check_design(X, w)
    if np.any(~np.isfinite(y[w > 0])):
        raise DomainError("response has non-finite entries on weighted rows")
    y = np.where(w > 0, y, 0.0)

    xtw = X.T * w
    info = xtw @ X
    coef = np.linalg.solve(info, xtw @ y)
    eta = X @ coef
    resid = y - eta
    df = w.sum() - p
    dispersion = float(np.sum(w * resid**2) / df) if df > 0 else float("nan")
    naive_cov = dispersion * _inv_spd(info)
    return ModelFit(
        kind=GAUSSIAN,
        coefficients=coef,
        naive_cov=naive_cov,
        estfun=(w * resid)[:, None] * X,
        weights=w,
        dispersion=dispersion,
        linear_predictor=eta,
        converged=True,
        iterations=1,
        information=info,
    )


def predict_linear(fit: ModelFit, newdata) -> np.ndarray:
    if fit.kind != GAUSSIAN:
        raise DomainError(f"predict_linear needs a gaussian fit, got {fit.kind}")
    newdata = np.atleast_2d(np.asarray(newdata, dtype=float))
    if newdata.shape[1] != fit.coefficients.size:
        raise DomainError(
            f"newdata has {newdata.shape[1]} columns, model has {fit.coefficients.size}"
        )
    return newdata @ fit.coefficients


# --------------------------------------------------------------------------- logistic


def _expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def _logistic_loglik(eta, y, w):
    return np.sum(w * (y * eta - np.logaddexp(0.0, eta)), axis=-1)


def glm_estfun(kind, X, y, w, beta) -> np.ndarray:
    """Weighted per-row GLM score ``w * (y - mu) * x`` at ``beta``."""
    eta = X @ beta
    mu = _expit(eta) if kind == BINOMIAL else eta
    return (w * (y - mu))[:, None] * X


def fit_glm_binomial(design_matrix, response, weights=None, start=None) -> ModelFit:
    X = np.asarray(design_matrix, dtype=float)
    y = np.asarray(response, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise DomainError("response length does not match design matrix")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DomainError("binomial response must be 0/1")
    w = _check_weights(weights, n)
    X = _check_design(X, w)

    beta = np.zeros(p) if start is None else np.array(start, dtype=float)
    eta = X @ beta
    ll = _logistic_loglik(eta, y, w)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        mu = _expit(eta)
        grad = X.T @ (w * (y - mu))
        hess = (X.T * (w * mu * (1.0 - mu))) @ X
        try:
            delta = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise DivergenceError("logistic information became singular (separation?)") from exc
        step = 1.0
        for _ in range(30):
            cand = beta + step * delta
            eta_c = X @ cand
            ll_c = _logistic_loglik(eta_c, y, w)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * (1.0 + abs(ll)):
                break
            step *= 0.5
        delta = cand - beta
        beta, eta, ll = cand, eta_c, ll_c
        if np.max(np.abs(beta)) > DIVERGENCE_NORM:
            raise DivergenceError(f"coefficients diverged (|beta| > {DIVERGENCE_NORM:g})")
        if _small_step(delta, beta):
            converged = True
            break
    if not converged:
        if np.max(np.abs(eta[w > 0])) > 30:
            raise DivergenceError("fitted probabilities at 0/1: complete or quasi-complete separation")
        raise ConvergenceError("IRLS did not converge", last_iterate=beta, iterations=it)

    mu = _expit(eta)
    info = (X.T * (w * mu * (1.0 - mu))) @ X
    return ModelFit(
        kind=BINOMIAL,
        coefficients=beta,
        naive_cov=_inv_spd(info),
        estfun=(w * (y - mu))[:, None] * X,
        weights=w,
        dispersion=1.0,
        linear_predictor=eta,
        converged=True,
        iterations=it,
        information=info,
    )


# --------------------------------------------------------------------------- Cox (Breslow)


def _stratum_index(outcome: SurvivalOutcome):
    if outcome.strata is None:
        return [np.arange(len(outcome))]
    _, inv = np.unique(outcome.strata, return_inverse=True)
    return [np.flatnonzero(inv == s) for s in range(inv.max() + 1)]


class _CoxStratum:
    """Sorted view of one outcome stratum; risk sets are {time >= t}."""

    def __init__(self, rows, time, status):
        order = np.argsort(time[rows], kind="stable")
        self.rows = rows[order]
        self.t = time[self.rows]
        self.d = status[self.rows].astype(float)
        self.first = np.searchsorted(self.t, self.t, side="left")
        self.last = np.searchsorted(self.t, self.t, side="right") - 1


def _revcumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


def _cox_parts(strata, X, w, beta, want_info=True, want_resid=False):
    """Weighted Breslow log partial likelihood, score, information, score residuals."""
    n, k = X.shape
    ll = 0.0
    score = np.zeros(k)
    info = np.zeros((k, k))
    resid = np.zeros((n, k)) if want_resid else None
    for s in strata:
        Xs = X[s.rows]
        ws = w[s.rows]
        eta = Xs @ beta
        c = eta.max()
        e = np.exp(eta - c)
        r = ws * e
        S0 = _revcumsum(r)[s.first]
        S1 = _revcumsum(r[:, None] * Xs)[s.first]
        xbar = S1 / S0[:, None]
        wd = ws * s.d
        ev = wd > 0
        ll += np.sum(wd[ev] * (eta[ev] - c - np.log(S0[ev])))
        score += (wd[:, None] * (Xs - xbar)).sum(axis=0)
        if want_info:
            S2 = _revcumsum(r[:, None, None] * Xs[:, :, None] * Xs[:, None, :])[s.first]
            cov = S2 / S0[:, None, None] - xbar[:, :, None] * xbar[:, None, :]
            info += np.tensordot(wd, cov, axes=1)
        if want_resid:
            dH = np.where(ev, wd / np.where(ev, S0, 1.0), 0.0)
            H = np.cumsum(dH)[s.last]
            Hx = np.cumsum(dH[:, None] * xbar, axis=0)[s.last]
            rs = s.d[:, None] * (Xs - xbar) - e[:, None] * (Xs * H[:, None] - Hx)
            resid[s.rows] = rs
    return ll, score, info, resid


def _cox_strata(outcome):
    return [
        _CoxStratum(rows, outcome.time, outcome.status) for rows in _stratum_index(outcome)
    ]


def cox_estfun(X, outcome: SurvivalOutcome, w, beta, strata=None) -> np.ndarray:
    """Weighted Cox score residuals at ``beta``; columns sum to the total score."""
    strata = _cox_strata(outcome) if strata is None else strata
    _, _, _, resid = _cox_parts(strata, np.asarray(X, float), w, np.asarray(beta, float),
                                want_info=False, want_resid=True)
    return w[:, None] * resid


def cox_score(X, outcome: SurvivalOutcome, w, beta, strata=None) -> np.ndarray:
    strata = _cox_strata(outcome) if strata is None else strata
    _, score, _, _ = _cox_parts(strata, np.asarray(X, float), w, np.asarray(beta, float),
                                want_info=False)
    return score


def cox_loglik(X, outcome: SurvivalOutcome, w, beta) -> float:
    ll, _, _, _ = _cox_parts(_cox_strata(outcome), np.asarray(X, float), w,
                             np.asarray(beta, float), want_info=False)
    return ll


def fit_coxph(design_matrix, outcome: SurvivalOutcome, weights=None, start=None) -> ModelFit:
    X = np.asarray(design_matrix, dtype=float)
    n, k = X.shape
    if len(outcome) != n:
        raise DomainError("outcome length does not match design matrix")
    w = _check_weights(weights, n)
    if np.any(~np.isfinite(X)):
        raise DomainError("design matrix has non-finite entries")
    strata = _cox_strata(outcome)
    if not np.any((outcome.status == 1) & (w > 0)):
        raise DomainError("no events: partial likelihood undefined")
    for s in strata:
        if not np.any(s.d * w[s.rows] > 0):
            raise DomainError("an outcome stratum has no events")

    # Columns with no contrast inside any stratum carry no information.
    free = np.zeros(k, dtype=bool)
    for s in strata:
        free |= np.ptp(X[s.rows], axis=0) > 0
    if not free.all():
        warnings.warn(f"Cox covariates {np.flatnonzero(~free).tolist()} are constant within "
                      "strata; coefficients fixed at 0", RuntimeWarning, stacklevel=2)
    Xf = X[:, free]
    kf = Xf.shape[1]

    beta = np.zeros(kf) if start is None else np.asarray(start, float)[free]
    ll, score, info, _ = _cox_parts(strata, Xf, w, beta)
    converged = kf == 0
    it = 0
    for it in range(1, MAX_ITER + 1):
        if kf == 0:
            break
        try:
            delta = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise DivergenceError("Cox information became singular") from exc
        step = 1.0
        for _ in range(30):
            cand = beta + step * delta
            parts = _cox_parts(strata, Xf, w, cand)
            if np.isfinite(parts[0]) and parts[0] >= ll - 1e-12 * (1.0 + abs(ll)):
                break
            step *= 0.5
        delta = cand - beta
        beta = cand
        ll, score, info, _ = parts
        if np.max(np.abs(beta)) > DIVERGENCE_NORM:
            raise DivergenceError("Cox coefficients diverged (monotone likelihood)")
        if _small_step(delta, beta):
            converged = True
            break
    if not converged:
        raise ConvergenceError("Cox Newton-Raphson did not converge", last_iterate=beta,
                               iterations=it)

    full_beta = np.zeros(k)
    full_beta[free] = beta
    _, _, info_f, resid = _cox_parts(strata, X, w, full_beta, want_resid=True)
    naive = np.zeros((k, k))
    if kf:
        naive[np.ix_(free, free)] = _inv_spd(info_f[np.ix_(free, free)])
    return ModelFit(
        kind=COXPH,
        coefficients=full_beta,
        naive_cov=naive,
        estfun=w[:, None] * resid,
        weights=w,
        dispersion=1.0,
        linear_predictor=X @ full_beta,
        converged=True,
        iterations=it,
        information=info_f,
    )


# --------------------------------------------------------------------------- batched fits


def fit_gaussian_batch(X, y, w):
    """Weighted least squares for a stack of problems. Returns (coef[B, p], ok[B])."""
    xtw = np.swapaxes(X, 1, 2) * w[:, None, :]
    info = xtw @ X
    rhs = np.einsum("bpn,bn->bp", xtw, y)
    B, p = rhs.shape
    coef = np.full((B, p), np.nan)
    ok = np.linalg.cond(info) < 1e12
    if ok.any():
        coef[ok] = np.linalg.solve(info[ok], rhs[ok][..., None])[..., 0]
    return coef, ok


def fit_logistic_batch(X, y, w, start=None):
    """IRLS for a stack of logistic problems sharing the convergence rules of
    :func:`fit_glm_binomial`. Failed problems (singular, diverged, not converged)
    are flagged in ``ok`` and their coefficients set to NaN.
    """
    B, n, p = X.shape
    beta = np.zeros((B, p)) if start is None else np.broadcast_to(start, (B, p)).copy()
    eta = np.einsum("bnp,bp->bn", X, beta)
    ll = _logistic_loglik(eta, y, w)
    active = np.ones(B, dtype=bool)
    ok = np.zeros(B, dtype=bool)
    for _ in range(MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Xa, ya, wa = X[idx], y[idx], w[idx]
        mu = _expit(eta[idx])
        grad = np.einsum("bnp,bn->bp", Xa, wa * (ya - mu))
        hess = np.einsum("bnp,bn,bnq->bpq", Xa, wa * mu * (1.0 - mu), Xa)
        good = np.linalg.cond(hess) < 1e14
        delta = np.zeros_like(grad)
        if good.any():
            delta[good] = np.linalg.solve(hess[good], grad[good][..., None])[..., 0]
        bad = idx[~good]
        active[bad] = False
        step = np.ones(idx.size)
        cand = beta[idx] + delta
        eta_c = np.einsum("bnp,bp->bn", Xa, cand)
        ll_c = _logistic_loglik(eta_c, ya, wa)
        for _ in range(30):
            worse = ~(np.isfinite(ll_c) & (ll_c >= ll[idx] - 1e-12 * (1.0 + np.abs(ll[idx]))))
            worse &= good
            if not worse.any():
                break
            step[worse] *= 0.5
            cand[worse] = beta[idx][worse] + step[worse, None] * delta[worse]
            eta_c[worse] = np.einsum("bnp,bp->bn", Xa[worse], cand[worse])
            ll_c[worse] = _logistic_loglik(eta_c[worse], ya[worse], wa[worse])
        moved = cand - beta[idx]
        upd = idx[good]
        beta[upd] = cand[good]
        eta[upd] = eta_c[good]
        ll[upd] = ll_c[good]
        big = np.max(np.abs(beta[idx]), axis=1)
        diverged = good & (big > DIVERGENCE_NORM)
        done = good & ~diverged & (
            np.max(np.abs(moved), axis=1) <= TOL_COEF * (1.0 + big)
        )
        active[idx[diverged]] = False
        active[idx[done]] = False
        ok[idx[done]] = True
    beta[~ok] = np.nan
    return beta, ok
