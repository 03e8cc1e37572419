from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from rcsandwich.calibration import Dataset
from rcsandwich.dataio import ColumnMap, read_dataset_csv
from rcsandwich.simulation import ScenarioConfig, generate

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")

DATA = Path(__file__).parent / "data"
ROOT = Path(__file__).resolve().parents[1]
TOY_MAP = ColumnMap(id="id", xstar="xstar", subset="subset", xstarstar="xstarstar", z=("z",),
                    outcome="y")

# Filled by test_acceptance; printed once at the end of the session.
ACCEPTANCE_LINES = {}


def load_toy(k):
    return read_dataset_csv(DATA / f"oracle_toy_{k}.csv", TOY_MAP)


@pytest.fixture(scope="session")
def toy_corpus():
    return [load_toy(k) for k in range(5)]


def simulated(rep=0, **kw):
    kw.setdefault("reps", 1)
    return generate(ScenarioConfig(**kw), rep)


@pytest.fixture(scope="session")
def srs_logistic():
    return simulated(0, N_target=600, n_subset=200, sigma2=0.5, seed=3)


@pytest.fixture(scope="session")
def survey_logistic():
    return simulated(0, sampling="survey", N_target=1000, sigma2=0.25, seed=4)


@pytest.fixture(scope="session")
def srs_cox():
    return simulated(0, N_target=400, n_subset=150, sigma2=0.5, outcome="cox", seed=5)


def make_dataset(n, n_sub, seed=0, outcome="logistic"):
    """Small hand-rolled cohort for property tests."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    z = 0.3 * x + rng.normal(size=n)
    xstar = 0.2 + 0.5 * x + 0.1 * z + rng.normal(scale=0.5, size=n)
    subset = np.zeros(n, dtype=bool)
    subset[rng.choice(n, n_sub, replace=False)] = True
    xss = np.where(subset, x + rng.normal(scale=0.3, size=n), np.nan)
    p = 1 / (1 + np.exp(-(0.2 + 0.5 * x - 0.3 * z)))
    y = (rng.uniform(size=n) < p).astype(float)
    if outcome == "linear":
        y = 0.5 + 0.7 * x - 0.2 * z + rng.normal(size=n)
    return Dataset(np.arange(n), xstar, xss, z, subset, y=y, x_true=x, z_names=("z",))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
