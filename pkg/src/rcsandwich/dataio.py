"""CSV reading and writing for :class:`~rcsandwich.calibration.Dataset`.

Floats are written with 17 significant digits, so a write/read cycle returns
bit-identical values. An empty field means missing; only the biomarker column
may be missing, and only on rows outside the calibration subset.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .calibration import Dataset
from .errors import DataError
from .models import SurvivalOutcome


@dataclass(frozen=True)
class ColumnMap:
    """Which CSV column plays which role. Optional roles are ``None``."""

    id: str
    xstar: str
    subset: str
    xstarstar: str | None = None
    z: tuple = ()
    outcome: str | None = None
    time: str | None = None
    status: str | None = None
    stratum: str | None = None
    cluster: str | None = None
    weight: str | None = None

    def __post_init__(self):
        if self.outcome is None and (self.time is None or self.status is None):
            raise DataError("column map needs 'outcome' or both 'time' and 'status'")
        if self.outcome is not None and (self.time is not None or self.status is not None):
            raise DataError("column map has both 'outcome' and 'time'/'status'")

    def required(self) -> list[str]:
        cols = [self.id, self.xstar, self.subset, *self.z]
        for name in ("xstarstar", "outcome", "time", "status", "stratum", "cluster", "weight"):
            if getattr(self, name) is not None:
                cols.append(getattr(self, name))
        return cols


def format_float(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else f"{v:.17g}"


def _labels(values):
    """Keep labels as ints when every entry is an integer literal."""
    try:
        return np.array([int(v) for v in values])
    except ValueError:
        return np.array(values, dtype=object)


def _floats(values, column, allow_missing=False):
    out = np.empty(len(values))
    for i, v in enumerate(values):
        v = v.strip()
        if v == "":
            if not allow_missing:
                raise DataError(f"missing value in column {column!r} on data row {i + 1}")
            out[i] = np.nan
            continue
        try:
            out[i] = float(v)
        except ValueError:
            raise DataError(f"non-numeric value {v!r} in column {column!r} on data row {i + 1}") from None
    return out


def read_columns(path) -> dict[str, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, v in zip(header, row):
                cols[h].append(v)
    return cols


def read_dataset_csv(path, cmap: ColumnMap) -> Dataset:
    cols = read_columns(path)
    missing = [c for c in cmap.required() if c not in cols]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    subset = _floats(cols[cmap.subset], cmap.subset)
    if not np.all(np.isin(subset, (0.0, 1.0))):
        raise DataError(f"subset column {cmap.subset!r} must be 0/1")
    subset = subset.astype(bool)
    n = subset.size
    if cmap.xstarstar is None:
        xss = np.full(n, np.nan)
    else:
        xss = _floats(cols[cmap.xstarstar], cmap.xstarstar, allow_missing=True)
        bad = np.flatnonzero(~subset & np.isfinite(xss))
        if bad.size:
            raise DataError(f"{cmap.xstarstar!r} is present on rows with subset=0 "
                            f"(first data row {bad[0] + 1})")
        gap = np.flatnonzero(subset & ~np.isfinite(xss))
        if gap.size:
            raise DataError(f"{cmap.xstarstar!r} is missing on subset rows "
                            f"(first data row {gap[0] + 1})")
    z = (np.column_stack([_floats(cols[c], c) for c in cmap.z]) if cmap.z
         else np.zeros((n, 0)))
    y = survival = None
    if cmap.outcome is not None:
        y = _floats(cols[cmap.outcome], cmap.outcome)
    else:
        survival = SurvivalOutcome(_floats(cols[cmap.time], cmap.time),
                                   _floats(cols[cmap.status], cmap.status))
    opt = {}
    for name in ("stratum", "cluster"):
        col = getattr(cmap, name)
        if col is not None:
            opt[name] = _labels(cols[col])
    if cmap.weight is not None:
        opt["weight"] = _floats(cols[cmap.weight], cmap.weight)
    return Dataset(unit_id=_labels(cols[cmap.id]), xstar=_floats(cols[cmap.xstar], cmap.xstar),
                   xstarstar=xss, z=z, subset=subset, y=y, survival=survival,
                   z_names=tuple(cmap.z), **opt)


def dataset_column_map(data: Dataset) -> ColumnMap:
    """The column map matching :func:`write_dataset_csv`'s layout."""
    surv = data.y is None
    return ColumnMap(
        id="id", xstar="xstar", subset="subset", xstarstar="xstarstar", z=tuple(data.z_names),
        outcome=None if surv else "y", time="time" if surv else None,
        status="status" if surv else None,
        stratum=None if data.stratum is None else "stratum",
        cluster=None if data.cluster is None else "cluster",
        weight=None if data.weight is None else "weight",
    )


def write_dataset_csv(data: Dataset, path) -> ColumnMap:
    cmap = dataset_column_map(data)
    columns = {"id": [str(v) for v in data.unit_id]}
    if data.y is not None:
        columns["y"] = [format_float(v) for v in data.y]
    else:
        columns["time"] = [format_float(v) for v in data.survival.time]
        columns["status"] = [str(int(v)) for v in data.survival.status]
    columns["xstar"] = [format_float(v) for v in data.xstar]
    columns["xstarstar"] = [format_float(v) for v in data.xstarstar]
    for i, name in enumerate(data.z_names):
        columns[name] = [format_float(v) for v in data.z[:, i]]
    columns["subset"] = [str(int(v)) for v in data.subset]
    for name in ("stratum", "cluster"):
        val = getattr(data, name)
        if val is not None:
            columns[name] = [str(v) for v in val]
    if data.weight is not None:
        columns["weight"] = [format_float(v) for v in data.weight]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        w.writerows(zip(*columns.values()))
    return cmap
