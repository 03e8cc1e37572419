"""Regenerate the five 20-row toy datasets used by the closed-form oracle tests."""

from pathlib import Path

import numpy as np

from rcsandwich.calibration import Dataset
from rcsandwich.dataio import write_dataset_csv

OUT = Path(__file__).resolve().parents[1] / "tests" / "data"
N, n = 20, 12


def toy(seed):
    rng = np.random.default_rng([7, seed])
    x = rng.normal(size=N)
    z = 0.4 * x + rng.normal(size=N)
    xstar = 0.2 + 0.6 * x + 0.2 * z + rng.normal(scale=0.5, size=N)
    subset = np.zeros(N, dtype=bool)
    subset[rng.choice(N, n, replace=False)] = True
    xss = np.where(subset, x + rng.normal(scale=0.4, size=N), np.nan)
    p = 1 / (1 + np.exp(-(0.1 + 0.8 * x - 0.5 * z)))
    y = (rng.uniform(size=N) < p).astype(float)
    return Dataset(np.arange(N), xstar, xss, z, subset, y=y, z_names=("z",))


if __name__ == "__main__":
    for k in range(5):
        write_dataset_csv(toy(k), OUT / f"oracle_toy_{k}.csv")
    print(f"wrote 5 datasets to {OUT}")
