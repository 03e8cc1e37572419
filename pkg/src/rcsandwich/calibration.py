"""Regression-calibration pipeline: stage 1 on the validation subset, calibrated
exposure for every row, stage 2 outcome model on the calibrated exposure."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError
from .models import (BINOMIAL, COXPH, GAUSSIAN, KINDS, ModelFit, SurvivalOutcome,
                     fit_coxph, fit_glm_binomial, fit_glm_gaussian, predict_linear)
from .survey import SurveyDesign, make_srs_design


def _ro(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Column-oriented cohort.

    ``xstarstar`` is NaN exactly on rows with ``subset == 0``. ``y`` holds a
    binary or continuous outcome; ``survival`` a right-censored one. Design
    columns are optional; without them the cohort is treated as an SRS.
    ``x_true`` is only present for simulated data.
    """

    unit_id: np.ndarray
    xstar: np.ndarray
    xstarstar: np.ndarray
    z: np.ndarray
    subset: np.ndarray
    y: np.ndarray | None = None
    survival: SurvivalOutcome | None = None
    stratum: np.ndarray | None = None
    cluster: np.ndarray | None = None
    weight: np.ndarray | None = None
    x_true: np.ndarray | None = None
    z_names: tuple = field(default=())

    def __post_init__(self):
        n = len(self.unit_id)
        object.__setattr__(self, "unit_id", _ro(self.unit_id, dtype=None))
        object.__setattr__(self, "xstar", _ro(self.xstar))
        object.__setattr__(self, "xstarstar", _ro(self.xstarstar))
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.size == 0:
            z = np.zeros((n, 0))
        object.__setattr__(self, "z", _ro(z))
        object.__setattr__(self, "subset", _ro(np.asarray(self.subset).astype(bool), dtype=bool))
        for name in ("xstar", "xstarstar", "subset"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"column {name!r} must have length {n}")
        if self.z.shape[0] != n:
            raise DataError(f"covariate matrix must have {n} rows")
        if np.any(~np.isfinite(self.xstar)) or np.any(~np.isfinite(self.z)):
            raise DataError("xstar and z must be observed on every row")
        present = np.isfinite(self.xstarstar)
        if np.any(present != self.subset):
            raise DataError("xstarstar must be present exactly on subset rows")
        if self.y is None and self.survival is None:
            raise DataError("dataset needs an outcome (y or survival)")
        if self.y is not None:
            object.__setattr__(self, "y", _ro(self.y))
            if self.y.shape != (n,):
                raise DataError(f"outcome must have length {n}")
        if self.survival is not None and len(self.survival) != n:
            raise DataError(f"survival outcome must have length {n}")
        for name in ("stratum", "cluster", "weight", "x_true"):
            val = getattr(self, name)
            if val is not None:
                val = _ro(val, dtype=float if name in ("weight", "x_true") else None)
                if val.shape != (n,):
                    raise DataError(f"column {name!r} must have length {n}")
                object.__setattr__(self, name, val)
        if not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{i + 1}" for i in range(self.z.shape[1])))
        elif len(self.z_names) != self.z.shape[1]:
            raise DataError("z_names length does not match covariate columns")

    def __len__(self):
        return len(self.unit_id)

    @property
    def n_subset(self) -> int:
        return int(self.subset.sum())

    @property
    def has_design(self) -> bool:
        return self.weight is not None or self.stratum is not None or self.cluster is not None

    def design(self) -> SurveyDesign:
        n = len(self)
        if not self.has_design:
            return make_srs_design(n, self.unit_id)
        stratum = np.zeros(n, dtype=int) if self.stratum is None else self.stratum
        cluster = self.unit_id if self.cluster is None else self.cluster
        weight = np.ones(n) if self.weight is None else self.weight
        return SurveyDesign(self.unit_id, stratum, cluster, weight)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(
            unit_id=self.unit_id[idx], xstar=self.xstar[idx], xstarstar=self.xstarstar[idx],
            z=self.z[idx], subset=self.subset[idx], y=pick(self.y),
            survival=None if self.survival is None else self.survival.take(idx),
            stratum=pick(self.stratum), cluster=pick(self.cluster), weight=pick(self.weight),
            x_true=pick(self.x_true), z_names=self.z_names,
        )

    def stage1_matrix(self) -> np.ndarray:
        """Rows ``(1, X*, Z)`` for every unit."""
        return np.column_stack([np.ones(len(self)), self.xstar, self.z])

    def stage1_names(self) -> list[str]:
        return ["(Intercept)", "xstar", *self.z_names]

    def stage2_matrix(self, exposure, kind) -> np.ndarray:
        """Rows ``(1, exposure, Z)``; no intercept column for Cox."""
        cols = [np.asarray(exposure, dtype=float), self.z]
        if kind != COXPH:
            cols.insert(0, np.ones(len(self)))
        return np.column_stack(cols)

    def stage2_names(self, kind, exposure_name="xhat") -> list[str]:
        names = [exposure_name, *self.z_names]
        return names if kind == COXPH else ["(Intercept)", *names]

    def outcome_for(self, kind):
        if kind == COXPH:
            if self.survival is None:
                raise DataError("Cox stage 2 needs a survival outcome")
            return self.survival
        if self.y is None:
            raise DataError(f"{kind} stage 2 needs a y outcome")
        return self.y


def xhat_column(kind) -> int:
    return 0 if kind == COXPH else 1


@dataclass(frozen=True)
class TwoStageFit:
    stage1: ModelFit
    stage2: ModelFit
    xhat: np.ndarray
    kind: str
    exposure: str = "calibrated"

    @property
    def xhat_column_index(self) -> int:
        return xhat_column(self.kind)

    @property
    def j(self) -> int:
        return self.stage1.coefficients.size

    @property
    def k(self) -> int:
        return self.stage2.coefficients.size


def fit_stage1(data: Dataset, design: SurveyDesign) -> ModelFit:
    sub = data.subset
    j = 2 + data.z.shape[1]
    if sub.sum() < j + 2:
        raise DomainError(f"calibration subset has {sub.sum()} rows; need at least {j + 2}")
    return fit_glm_gaussian(data.stage1_matrix()[sub], data.xstarstar[sub], design.weight[sub])


def calibrate(stage1: ModelFit, data: Dataset) -> np.ndarray:
    return predict_linear(stage1, data.stage1_matrix())


def fit_model(kind, X, outcome, weights, start=None) -> ModelFit:
    if kind == BINOMIAL:
        return fit_glm_binomial(X, outcome, weights, start=start)
    if kind == GAUSSIAN:
        return fit_glm_gaussian(X, outcome, weights)
    if kind == COXPH:
        return fit_coxph(X, outcome, weights, start=start)
    raise DomainError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def fit_stage2(data: Dataset, design: SurveyDesign, xhat, kind, start=None) -> ModelFit:
    return fit_model(kind, data.stage2_matrix(xhat, kind), data.outcome_for(kind),
                     design.weight, start=start)


def fit_two_stage(data: Dataset, design: SurveyDesign | None = None, kind=BINOMIAL,
                  exposure="calibrated") -> TwoStageFit:
    """Run the pipeline. ``exposure="true"`` fits stage 2 on ``x_true``
    instead of the calibrated exposure (no dependence on stage 1)."""
    design = data.design() if design is None else design
    stage1 = fit_stage1(data, design)
    xhat = calibrate(stage1, data)
    if exposure == "calibrated":
        expo = xhat
    elif exposure == "true":
        if data.x_true is None:
            raise DataError("exposure='true' needs x_true")
        expo = data.x_true
    else:
        raise DomainError(f"unknown exposure {exposure!r}")
    stage2 = fit_stage2(data, design, expo, kind)
    return TwoStageFit(stage1, stage2, _ro(xhat), kind, exposure)
