"""Stacked estimating equations for (alpha, beta) and the two-stage sandwich.

Parameter order is always the stage-1 block ``(intercept, X*, Z...)`` followed
by the stage-2 block ``(intercept, Xhat, Z...)`` (no intercept for Cox).

``A`` is the average Jacobian of the stacked weighted scores, so its diagonal
blocks are minus each model's information divided by N and its upper-right
block is exactly zero. The lower-left block, the sensitivity of the stage-2
score to alpha through ``Xhat``, is computed by central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import Dataset, TwoStageFit
from .errors import DomainError, NumericalError, SingularSystemError
from .models import BINOMIAL, COXPH, GAUSSIAN, ModelFit, _cox_strata, cox_score, glm_estfun
from .survey import SurveyDesign, augment_strata, total_variance

FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)


@dataclass(frozen=True)
class StackedSystem:
    A: np.ndarray
    U_tilde: np.ndarray
    j: int
    k: int
    theta_hat: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.U_tilde.shape[0]


@dataclass(frozen=True)
class SandwichResult:
    V: np.ndarray
    se: np.ndarray
    j: int
    k: int

    @property
    def stage1_block(self) -> np.ndarray:
        return self.V[: self.j, : self.j]

    @property
    def stage2_block(self) -> np.ndarray:
        return self.V[self.j :, self.j :]

    @property
    def stage2_se(self) -> np.ndarray:
        return self.se[self.j :]


def _stage2_score_fn(data: Dataset, stage2: ModelFit, exposure: str):
    """Closure alpha -> total weighted stage-2 score at the fitted beta."""
    kind = stage2.kind
    beta = stage2.coefficients
    w = stage2.weights
    S1 = data.stage1_matrix()
    outcome = data.outcome_for(kind)
    fixed_expo = None
    if exposure == "true":
        if data.x_true is None:
            raise DomainError("exposure='true' needs x_true")
        fixed_expo = data.x_true
    elif exposure != "calibrated":
        raise DomainError(f"unknown exposure {exposure!r}")
    strata = _cox_strata(outcome) if kind == COXPH else None

    def score(alpha):
        expo = S1 @ alpha if fixed_expo is None else fixed_expo
        X = data.stage2_matrix(expo, kind)
        if kind == COXPH:
            return cox_score(X, outcome, w, beta, strata=strata)
        return glm_estfun(kind, X, outcome, w, beta).sum(axis=0)

    return score


def stage2_cross_jacobian(data: Dataset, design: SurveyDesign, stage1: ModelFit,
                          stage2: ModelFit, exposure="calibrated", step=None) -> np.ndarray:
    """(1/N) d/d(alpha) of the total weighted stage-2 score, beta held at its fit.

    ``step`` overrides the relative step ``cbrt(eps)``; the absolute step for
    component m is ``step * max(1, |alpha_m|)``.
    """
    rel = FD_STEP if step is None else step
    alpha = np.asarray(stage1.coefficients, dtype=float)
    score = _stage2_score_fn(data, stage2, exposure)
    N = len(data)
    out = np.empty((stage2.coefficients.size, alpha.size))
    for m in range(alpha.size):
        h = rel * max(1.0, abs(alpha[m]))
        up = alpha.copy()
        dn = alpha.copy()
        up[m] += h
        dn[m] -= h
        diff = score(up) - score(dn)
        if not np.all(np.isfinite(diff)):
            raise NumericalError(f"non-finite perturbed stage-2 score for alpha[{m}]")
        out[:, m] = diff / ((up[m] - dn[m]) * N)
    return out


def build_stacked_system(data: Dataset, design: SurveyDesign, stage1: ModelFit,
                         stage2: ModelFit, exposure="calibrated", step=None) -> StackedSystem:
    N = len(data)
    j = stage1.coefficients.size
    k = stage2.coefficients.size
    if stage1.n_obs != data.n_subset:
        raise DomainError("stage-1 fit does not match the dataset's calibration subset")
    if stage2.n_obs != N:
        raise DomainError("stage-2 fit does not match the dataset")
    A = np.zeros((j + k, j + k))
    A[:j, :j] = -stage1.information / N
    A[j:, j:] = -stage2.information / N
    A[j:, :j] = stage2_cross_jacobian(data, design, stage1, stage2, exposure, step)
    for name, block in (("stage-1", A[:j, :j]), ("stage-2", A[j:, j:])):
        if np.linalg.cond(block) > 1e13:
            raise SingularSystemError(f"{name} block of A is singular")
    U = np.zeros((N, j + k))
    U[data.subset, :j] = stage1.unweighted_estfun()
    U[:, j:] = stage2.unweighted_estfun()
    theta = np.concatenate([stage1.coefficients, stage2.coefficients])
    return StackedSystem(A=A, U_tilde=U, j=j, k=k, theta_hat=theta)


def _solve_A(A):
    if np.linalg.cond(A) > 1e13:
        raise SingularSystemError("stacked A matrix is singular")
    return np.linalg.inv(A)


def influence(system: StackedSystem) -> np.ndarray:
    """Rows ``A^{-1} U_i / N``."""
    return system.U_tilde @ _solve_A(system.A).T / system.n_obs


def sandwich_variance(system: StackedSystem, design: SurveyDesign) -> SandwichResult:
    V = total_variance(design, influence(system))
    V = (V + V.T) / 2
    se = np.sqrt(np.clip(np.diag(V), 0.0, None))
    return SandwichResult(V=V, se=se, j=system.j, k=system.k)


def sandwich_design(data: Dataset, design: SurveyDesign, augment=None) -> SurveyDesign:
    """Design used for the stacked variance: strata crossed with subset
    membership unless the design is a plain SRS (or ``augment`` says otherwise)."""
    if augment is None:
        augment = not design.is_srs
    return augment_strata(design, data.subset) if augment else design


def two_stage_sandwich(data: Dataset, fit: TwoStageFit, design: SurveyDesign | None = None,
                       augment=None) -> SandwichResult:
    design = data.design() if design is None else design
    system = build_stacked_system(data, design, fit.stage1, fit.stage2, fit.exposure)
    return sandwich_variance(system, sandwich_design(data, design, augment))


def model_robust_variance(fit: ModelFit, design: SurveyDesign) -> np.ndarray:
    """One-model design-based sandwich ``I^{-1} var(sum w U) I^{-1}``."""
    infl = fit.unweighted_estfun() @ np.linalg.inv(fit.information)
    V = total_variance(design, infl)
    return (V + V.T) / 2


def naive_variance(fit: ModelFit, design: SurveyDesign) -> np.ndarray:
    """Stage-2 variance treating the calibrated exposure as fixed.

    Model-based inverse information under an SRS; the one-model design-based
    sandwich under a complex design, where model-based variances are not on
    the population scale.
    """
    if design.is_srs:
        return np.asarray(fit.naive_cov)
    return model_robust_variance(fit, design)


# --------------------------------------------------------------------------- closed-form oracle


def _logistic_pieces(data: Dataset, stage1: ModelFit, stage2: ModelFit):
    if stage1.kind != GAUSSIAN or stage2.kind != BINOMIAL:
        raise DomainError("closed-form A/B need a gaussian stage 1 and a binomial stage 2")
    if data.z.shape[1] != 1 or stage1.coefficients.size != 3 or stage2.coefficients.size != 3:
        raise DomainError("closed-form A/B are written for a single Z")
    a0, aX, aZ = stage1.coefficients
    b0, bX, bZ = stage2.coefficients
    xs = data.xstar
    zz = data.z[:, 0]
    V = data.subset.astype(float)
    xss = np.where(data.subset, data.xstarstar, 0.0)
    xhat = a0 + aX * xs + aZ * zz
    p = 1.0 / (1.0 + np.exp(-(b0 + bX * xhat + bZ * zz)))
    return a0, aX, aZ, bX, xs, zz, V, xss, xhat, p, data.y


def analytic_A_logistic(data: Dataset, stage1: ModelFit, stage2: ModelFit) -> np.ndarray:
    """Closed-form averaged Jacobian for linear stage 1 + logistic stage 2 (unit weights)."""
    a0, aX, aZ, bX, xs, zz, V, xss, xhat, p, Y = _logistic_pieces(data, stage1, stage2)
    q = p * (1.0 - p)
    one = np.ones_like(xs)
    zero = np.zeros_like(xs)
    rows = [
        [-V, -xs * V, -zz * V, zero, zero, zero],
        [-xs * V, -xs**2 * V, -xs * zz * V, zero, zero, zero],
        [-zz * V, -xs * zz * V, -zz**2 * V, zero, zero, zero],
        [-bX * q, -bX * xs * q, -bX * zz * q, -q, -xhat * q, -zz * q],
        [
            xhat * (bX * p**2 - bX * p) + Y - p,
            xhat * (bX * xs * p**2 - bX * xs * p) + xs * (Y - p),
            xhat * (bX * zz * p**2 - bX * zz * p) + zz * (Y - p),
            -xhat * q, -xhat**2 * q, -xhat * zz * q,
        ],
        [-bX * zz * q, -bX * zz * xs * q, -bX * zz**2 * q, -zz * q, -zz * xhat * q, -zz**2 * q],
    ]
    N = len(xs)
    return np.array([[np.sum(e * one) / N for e in row] for row in rows])


def analytic_B_logistic(data: Dataset, stage1: ModelFit, stage2: ModelFit) -> np.ndarray:
    """``(1/N) sum U_i U_i'`` with the closed-form stacked score vector."""
    a0, aX, aZ, bX, xs, zz, V, xss, xhat, p, Y = _logistic_pieces(data, stage1, stage2)
    r1 = V * (xss - a0 - aX * xs - aZ * zz)
    U = np.column_stack([r1, r1 * xs, r1 * zz, Y - p, xhat * (Y - p), zz * (Y - p)])
    return U.T @ U / len(xs)
