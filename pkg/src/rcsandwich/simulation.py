"""Synthetic cohorts (SRS and stratified cluster survey) and the replicate harness.

Replicate ``r`` of a scenario draws everything from generators seeded by
``(seed, r, stream)``; the report is a function of the config alone and does
not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.stats import norm

from .calibration import Dataset, calibrate, fit_stage1, fit_stage2, xhat_column
from .errors import ConfigError, NumericalError, RCSandwichError
from .models import BINOMIAL, COXPH, SurvivalOutcome
from .resampling import (MAD_SCALE, bootstrap_intervals, jackknife_estimates, mi_variance,
                         stratified_bootstrap)
from .sandwich import build_stacked_system, naive_variance, sandwich_design, sandwich_variance
from .survey import SurveyDesign, make_srs_design

log = logging.getLogger(__name__)

OUTCOMES = {"logistic": BINOMIAL, "cox": COXPH}

# Survey stand-in: 4 strata of 20 block groups, 10 sampled per stratum.
N_STRATA = 4
BG_PER_STRATUM = 20
BG_SAMPLED = 10
STRATUM_MEANS = (0.15, -0.15, 0.3, -0.3)
STRATUM_COV_SHIFT = (0.15, -0.15, 0.3, -0.3)
BG_MEAN_JITTER = (0.015, 0.0225, 0.03, 0.045)
BG_COV_JITTER = 0.15
UNIT_RATE_MEAN = 0.5
UNIT_RATE_RELATIVE = (1.6, 1.2, 0.8, 0.4)
MAX_FAILURE_FRACTION = 0.05
MAX_DESIGN_RETRIES = 20

METHODS = ("truth", "naive", "rc_naive_se", "rc_sandwich", "rc_bootstrap_wald",
           "rc_bootstrap_perc", "rc_bootstrap_bca", "rc_mi", "rc_mi_robust")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    sampling: str = "srs"
    N_target: int = 1000
    n_subset: int = 450
    r: float = 0.3
    sigma2: float = 0.25
    outcome: str = "logistic"
    beta0: float = 0.2
    beta_x: float = math.log(1.5)
    beta_z: float = math.log(0.7)
    delta0: float = 0.20
    delta1: float = 0.37
    delta2: float = 0.15
    biomarker_var: float = 0.2
    cox_rate: float = 0.23
    censor_time: float = 2.0
    reps: int = 1000
    boot_B: int = 0
    bca: bool = False
    bca_B: int = 1000
    mi_M: int = 0
    level: float = 0.95
    seed: int = 20240101
    survey_heterogeneity: float = 1.0
    survey_equal_prob: bool = False

    def __post_init__(self):
        if self.sampling not in ("srs", "survey"):
            raise ConfigError(f"sampling must be 'srs' or 'survey', got {self.sampling!r}")
        if self.outcome not in OUTCOMES:
            raise ConfigError(f"outcome must be one of {sorted(OUTCOMES)}, got {self.outcome!r}")
        if not -1 < self.r < 1:
            raise ConfigError("r must lie in (-1, 1)")
        for name in ("sigma2", "biomarker_var", "survey_heterogeneity"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.N_target < 2 or not 4 <= self.n_subset < self.N_target:
            raise ConfigError("need 4 <= n_subset < N_target")
        if self.boot_B < 0 or self.mi_M < 0 or self.boot_B == 1 or self.mi_M == 1:
            raise ConfigError("boot_B and mi_M must be 0 (off) or >= 2")
        if self.bca and self.bca_B < 2:
            raise ConfigError("bca_B must be >= 2")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.cox_rate <= 0 or self.censor_time <= 0:
            raise ConfigError("cox_rate and censor_time must be > 0")

    @property
    def stage2_kind(self) -> str:
        return OUTCOMES[self.outcome]

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _rng(config: ScenarioConfig, rep: int, stream: int = 0):
    return np.random.default_rng([config.seed, rep, stream])


def _stream_seed(config: ScenarioConfig, rep: int, stream: int) -> int:
    return int(np.random.SeedSequence([config.seed, rep, stream]).generate_state(1)[0])


def _outcome_and_errors(config: ScenarioConfig, rng, x, z):
    """Draw X*, the subset, X** and the outcome given true (X, Z)."""
    N = x.size
    e = rng.normal(0.0, math.sqrt(config.sigma2), N) if config.sigma2 > 0 else np.zeros(N)
    xstar = config.delta0 + config.delta1 * x + config.delta2 * z + e
    subset = np.zeros(N, dtype=bool)
    subset[rng.choice(N, size=config.n_subset, replace=False)] = True
    eps = rng.normal(0.0, math.sqrt(config.biomarker_var), N)
    xss = np.where(subset, x + eps, np.nan)
    lin = config.beta_x * x + config.beta_z * z
    y = survival = None
    if config.outcome == "logistic":
        p = 1.0 / (1.0 + np.exp(-(config.beta0 + lin)))
        y = (rng.uniform(size=N) < p).astype(float)
    else:
        rate = config.cox_rate * np.exp(lin)
        t = rng.exponential(1.0 / rate)
        status = (t <= config.censor_time).astype(int)
        survival = SurvivalOutcome(np.minimum(t, config.censor_time), status)
    return xstar, xss, subset, y, survival


def gen_srs_dataset(config: ScenarioConfig, rep_index: int) -> Dataset:
    rng = _rng(config, rep_index)
    N = config.N_target
    cov = [[1.0, config.r], [config.r, 1.0]]
    xz = rng.multivariate_normal([0.0, 0.0], cov, size=N, method="cholesky")
    x, z = xz[:, 0], xz[:, 1]
    xstar, xss, subset, y, survival = _outcome_and_errors(config, rng, x, z)
    return Dataset(unit_id=np.arange(N), xstar=xstar, xstarstar=xss, z=z, subset=subset, y=y,
                   survival=survival, x_true=x, z_names=("z",))


def _draw_survey_units(config: ScenarioConfig, rng):
    h = config.survey_heterogeneity
    rates = (np.full(N_STRATA, UNIT_RATE_MEAN) if config.survey_equal_prob
             else UNIT_RATE_MEAN * np.asarray(UNIT_RATE_RELATIVE))
    mean_bg = config.N_target / (N_STRATA * BG_SAMPLED * UNIT_RATE_MEAN)
    xs, zs, strata, clusters, weights = [], [], [], [], []
    for s in range(N_STRATA):
        sizes = rng.integers(int(0.5 * mean_bg), int(1.5 * mean_bg) + 1, size=BG_PER_STRATUM)
        chosen = rng.choice(BG_PER_STRATUM, size=BG_SAMPLED, replace=False)
        pi = BG_SAMPLED / BG_PER_STRATUM * rates[s]
        scale = 1.0 + h * STRATUM_COV_SHIFT[s]
        r_s = scale * config.r
        for g in chosen:
            m = rng.binomial(sizes[g], rates[s])
            omega = h * rng.uniform(-BG_MEAN_JITTER[s], BG_MEAN_JITTER[s])
            rho = h * rng.uniform(-BG_COV_JITTER * abs(r_s), BG_COV_JITTER * abs(r_s))
            mu = np.full(2, h * STRATUM_MEANS[s] + omega)
            cov = np.array([[scale, r_s + rho], [r_s + rho, scale]])
            xz = rng.multivariate_normal(mu, cov, size=m, method="cholesky")
            xs.append(xz[:, 0])
            zs.append(xz[:, 1])
            strata.append(np.full(m, s))
            clusters.append(np.full(m, s * BG_PER_STRATUM + g))
            weights.append(np.full(m, 1.0 / pi))
    cat = np.concatenate
    return cat(xs), cat(zs), cat(strata), cat(clusters), cat(weights)


def gen_survey_sample(config: ScenarioConfig, rep_index: int) -> tuple[Dataset, SurveyDesign]:
    rng = _rng(config, rep_index)
    for _ in range(MAX_DESIGN_RETRIES):
        x, z, stratum, cluster, weight = _draw_survey_units(config, rng)
        psu_per_stratum = [np.unique(cluster[stratum == s]).size for s in range(N_STRATA)]
        if min(psu_per_stratum) >= 2 and x.size > config.n_subset:
            break
    else:
        raise NumericalError("survey draw kept producing strata with fewer than 2 PSUs")
    xstar, xss, subset, y, survival = _outcome_and_errors(config, rng, x, z)
    N = x.size
    data = Dataset(unit_id=np.arange(N), xstar=xstar, xstarstar=xss, z=z, subset=subset, y=y,
                   survival=survival, stratum=stratum, cluster=cluster, weight=weight,
                   x_true=x, z_names=("z",))
    return data, data.design()


def generate(config: ScenarioConfig, rep_index: int) -> tuple[Dataset, SurveyDesign]:
    if config.sampling == "srs":
        data = gen_srs_dataset(config, rep_index)
        return data, make_srs_design(len(data), data.unit_id)
    return gen_survey_sample(config, rep_index)


# --------------------------------------------------------------------------- replicates


def run_replicate(config: ScenarioConfig, rep_index: int) -> dict:
    """Estimates, SEs and intervals for the exposure coefficient in one replicate.

    Returns ``{method: (estimate, se, ci_low, ci_high)}``.
    """
    data, design = generate(config, rep_index)
    kind = config.stage2_kind
    col = xhat_column(kind)
    z = norm.ppf(0.5 + config.level / 2)
    out = {}

    def wald(est, se):
        return (est, se, est - z * se, est + z * se)

    for method, expo in (("truth", data.x_true), ("naive", data.xstar)):
        fit = fit_stage2(data, design, expo, kind)
        se = math.sqrt(naive_variance(fit, design)[col, col])
        out[method] = wald(fit.coefficients[col], se)

    stage1 = fit_stage1(data, design)
    xhat = calibrate(stage1, data)
    stage2 = fit_stage2(data, design, xhat, kind)
    est = stage2.coefficients[col]
    out["rc_naive_se"] = wald(est, math.sqrt(naive_variance(stage2, design)[col, col]))
    system = build_stacked_system(data, design, stage1, stage2)
    sw = sandwich_variance(system, sandwich_design(data, design))
    out["rc_sandwich"] = wald(est, sw.stage2_se[col])

    if config.boot_B:
        draws = stratified_bootstrap(data, config.boot_B, _stream_seed(config, rep_index, 1),
                                     kind, start=stage2.coefficients)
        iv = bootstrap_intervals(draws, stage2.coefficients, config.level,
                                 types=("wald", "percentile"))
        out["rc_bootstrap_wald"] = (est, iv.se[col], *iv.wald[col])
        out["rc_bootstrap_perc"] = (est, iv.se[col], *iv.percentile[col])
    if config.bca:
        draws = stratified_bootstrap(data, config.bca_B, _stream_seed(config, rep_index, 2),
                                     kind, start=stage2.coefficients)
        jk = jackknife_estimates(data, kind)
        iv = bootstrap_intervals(draws, stage2.coefficients, config.level, jackknife=jk,
                                 types=("bca",))
        out["rc_bootstrap_bca"] = (est, iv.se[col], *iv.bca[col])
    if config.mi_M:
        mi = mi_variance(data, design, config.mi_M, _stream_seed(config, rep_index, 3), kind)
        out["rc_mi"] = wald(est, mi.se[col])
        out["rc_mi_robust"] = wald(est, mi.robust_se[col])
    return out


def _safe_replicate(args):
    config, rep = args
    try:
        return rep, run_replicate(config, rep), None
    except RCSandwichError as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


# --------------------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class MethodSummary:
    method: str
    estimate: float
    pct_bias: float
    mad: float
    ase: float
    cp: float
    ci_low: float
    ci_high: float


@dataclass
class StudyReport:
    scenario: str
    config: ScenarioConfig
    rows: list
    n_reps: int
    n_failed: int
    failures: list = field(default_factory=list)
    replicates: dict = field(default_factory=dict, repr=False)

    def row(self, method) -> MethodSummary:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_csv(self, path):
        cols = ["scenario", "method", "coefficient", "estimate", "pct_bias", "mad", "ase", "cp",
                "ci_low", "ci_high"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([self.scenario, r.method, "x", *(_fmt(v) for v in
                            (r.estimate, r.pct_bias, r.mad, r.ase, r.cp, r.ci_low, r.ci_high))])

    def to_text(self) -> str:
        c = self.config
        head = (f"{self.scenario}: sampling={c.sampling} N={c.N_target} sigma2={c.sigma2:.2f} "
                f"r={c.r} outcome={c.outcome} reps={self.n_reps} failed={self.n_failed}")
        lines = [head, f"{'method':<20}{'pct_bias':>10}{'mad':>8}{'ase':>8}{'cp':>7}"]
        for r in self.rows:
            pb = "---" if math.isnan(r.pct_bias) else f"{r.pct_bias:.2f}"
            mad = "---" if math.isnan(r.mad) else f"{r.mad:.2f}"
            lines.append(f"{r.method:<20}{pb:>10}{mad:>8}{r.ase:>8.2f}{r.cp:>7.2f}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.17g}"


def summarize(method, values, beta_x, with_bias) -> MethodSummary:
    v = np.asarray(values, float)
    est, se, lo, hi = v[:, 0], v[:, 1], v[:, 2], v[:, 3]
    nan = float("nan")
    med = float(np.median(est))
    return MethodSummary(
        method=method,
        estimate=med,
        pct_bias=float(np.median(100.0 * (est - beta_x) / beta_x)) if with_bias else nan,
        mad=float(MAD_SCALE * np.median(np.abs(est - med))) if with_bias else nan,
        ase=float(np.median(se)),
        cp=float(np.mean((lo <= beta_x) & (beta_x <= hi))),
        ci_low=float(np.median(lo)),
        ci_high=float(np.median(hi)),
    )


def run_study(config: ScenarioConfig, threads: int = 1, keep_replicates: bool = False) -> StudyReport:
    tasks = [(config, r) for r in range(config.reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_safe_replicate, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        results = [_safe_replicate(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    failures = [(rep, msg) for rep, out, msg in results if out is None]
    if len(failures) > MAX_FAILURE_FRACTION * config.reps:
        raise NumericalError(
            f"scenario {config.name!r}: {len(failures)} of {config.reps} replicates failed; "
            f"first: {failures[0][1]}"
        )
    ok = [(rep, out) for rep, out, _ in results if out is not None]
    rows = []
    for method in METHODS:
        vals = [out[method] for _, out in ok if method in out]
        if vals:
            rows.append(summarize(method, vals, config.beta_x,
                                  method in ("truth", "naive", "rc_naive_se")))
    report = StudyReport(config.name, config, rows, config.reps, len(failures), failures)
    if keep_replicates:
        report.replicates = dict(ok)
    return report


def config_dict(config: ScenarioConfig) -> dict:
    return asdict(config)


def with_overrides(config: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(config, **kw)
