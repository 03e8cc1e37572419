"""Sampling designs and with-replacement linearization variance of totals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DesignError, DomainError, LonelyPSUError


def _codes(labels):
    _, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.reshape(-1).astype(np.int64)


@dataclass(frozen=True)
class SurveyDesign:
    """Stratified cluster design with weights ``1/pi``.

    Clusters are nested in strata: the PSU used for variance is the pair
    (stratum, cluster), so a cluster label may be reused across strata. This is
    what lets :func:`augment_strata` split a PSU by subset membership without
    relabelling it.
    """

    unit_id: np.ndarray
    stratum: np.ndarray
    cluster: np.ndarray
    weight: np.ndarray
    with_replacement: bool = True

    def __post_init__(self):
        n = len(self.unit_id)
        for name in ("stratum", "cluster", "weight"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n,):
                raise DesignError(f"design column {name!r} must have length {n}")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        w = self.weight.astype(float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("design weights must be finite and > 0")
        object.__setattr__(self, "weight", w)
        uid = np.asarray(self.unit_id).copy()
        uid.setflags(write=False)
        object.__setattr__(self, "unit_id", uid)
        s = _codes(self.stratum)
        psu = _codes(s * (n + 1) + _codes(self.cluster))
        object.__setattr__(self, "_stratum_code", s)
        object.__setattr__(self, "_psu_code", psu)

    def __len__(self):
        return len(self.unit_id)

    @property
    def n_strata(self) -> int:
        return int(self._stratum_code.max()) + 1 if len(self) else 0

    @property
    def n_clusters(self) -> int:
        return int(self._psu_code.max()) + 1 if len(self) else 0

    @property
    def is_srs(self) -> bool:
        """One stratum, singleton clusters, constant weight."""
        return (
            self.n_strata == 1
            and self.n_clusters == len(self)
            and bool(np.all(self.weight == self.weight[0]))
        )

    def take(self, idx) -> "SurveyDesign":
        idx = np.asarray(idx)
        return SurveyDesign(self.unit_id[idx], self.stratum[idx], self.cluster[idx],
                            self.weight[idx], self.with_replacement)


def make_srs_design(n_units: int, unit_id=None) -> SurveyDesign:
    if n_units < 2:
        raise DomainError("an SRS design needs at least 2 units")
    ids = np.arange(n_units) if unit_id is None else np.asarray(unit_id)
    return SurveyDesign(ids, np.zeros(n_units, dtype=int), np.arange(n_units), np.ones(n_units))


def total_variance(design: SurveyDesign, values) -> np.ndarray:
    """Design covariance of the weighted total of ``values`` (rows = units).

    Cluster totals ``z_hc = sum w_i v_i`` are centered within stratum and
    combined as ``sum_h n_h/(n_h-1) sum_c (z_hc - zbar_h)(z_hc - zbar_h)'``.
    """
    v = np.asarray(values, dtype=float)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    n = len(design)
    if v.shape[0] != n:
        raise DomainError(f"values has {v.shape[0]} rows, design has {n}")
    wv = v * design.weight[:, None]
    psu = design._psu_code
    n_psu = design.n_clusters
    if n_psu == n and design.n_strata == 1:
        z = wv
        psu_stratum = np.zeros(n, dtype=np.int64)
    else:
        z = np.zeros((n_psu, v.shape[1]))
        np.add.at(z, psu, wv)
        psu_stratum = np.zeros(n_psu, dtype=np.int64)
        psu_stratum[psu] = design._stratum_code
    n_h = np.bincount(psu_stratum, minlength=design.n_strata)
    if np.any(n_h < 2):
        raise LonelyPSUError(np.flatnonzero(n_h < 2).tolist())
    sums = np.zeros((design.n_strata, v.shape[1]))
    np.add.at(sums, psu_stratum, z)
    centered = z - (sums / n_h[:, None])[psu_stratum]
    scale = np.sqrt(n_h / (n_h - 1.0))[psu_stratum]
    cz = centered * scale[:, None]
    out = cz.T @ cz
    out = (out + out.T) / 2
    return out[0, 0] if squeeze else out


def augment_strata(design: SurveyDesign, subset_indicator) -> SurveyDesign:
    """Cross-classify strata with a 0/1 indicator."""
    v = np.asarray(subset_indicator).astype(int)
    if v.shape != (len(design),):
        raise DomainError("subset indicator length does not match design")
    new = design._stratum_code * 2 + v
    return SurveyDesign(design.unit_id, new, design.cluster, design.weight,
                        design.with_replacement)


def subset_design(design: SurveyDesign, keep) -> SurveyDesign:
    keep = np.asarray(keep).astype(bool)
    if keep.shape != (len(design),):
        raise DomainError("keep mask length does not match design")
    if not keep.any():
        raise DomainError("subset is empty")
    return design.take(np.flatnonzero(keep))
