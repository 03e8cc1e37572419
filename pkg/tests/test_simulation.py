import math

import numpy as np
import pytest

from rcsandwich.errors import ConfigError
from rcsandwich.simulation import (N_STRATA, ScenarioConfig, gen_srs_dataset, gen_survey_sample,
                                   run_replicate, run_study)


def test_correlation_law_of_large_numbers():
    cfg = ScenarioConfig(N_target=1_000_000, n_subset=100, r=0.3, reps=1)
    d = gen_srs_dataset(cfg, 0)
    assert np.corrcoef(d.x_true, d.z[:, 0])[0, 1] == pytest.approx(0.3, abs=0.003)


def test_zero_error_variance_gives_exact_linear_xstar():
    cfg = ScenarioConfig(sigma2=0.0, reps=1)
    d = gen_srs_dataset(cfg, 0)
    want = cfg.delta0 + cfg.delta1 * d.x_true + cfg.delta2 * d.z[:, 0]
    np.testing.assert_array_equal(d.xstar, want)
    assert d.n_subset == cfg.n_subset


@pytest.mark.parametrize("N", [1000, 10_000])
def test_survey_sample_validity(N):
    cfg = ScenarioConfig(sampling="survey", N_target=N, reps=1)
    for rep in range(5):
        data, design = gen_survey_sample(cfg, rep)
        assert abs(len(data) - N) <= 0.15 * N
        assert np.all(design.weight > 0)
        assert design.n_strata == N_STRATA
        for s in range(N_STRATA):
            assert np.unique(design.cluster[design.stratum == s]).size >= 2
        assert data.n_subset == cfg.n_subset


def test_homogeneous_equal_probability_survey_matches_srs_law():
    cfg = ScenarioConfig(sampling="survey", N_target=100_000, reps=1, survey_heterogeneity=0.0,
                         survey_equal_prob=True)
    data, design = gen_survey_sample(cfg, 0)
    assert np.ptp(design.weight) == 0
    x, z = data.x_true, data.z[:, 0]
    se = 1 / math.sqrt(len(x))
    assert abs(x.mean()) < 5 * se and abs(z.mean()) < 5 * se
    assert x.var() == pytest.approx(1.0, abs=0.02)
    assert z.var() == pytest.approx(1.0, abs=0.02)
    assert np.cov(x, z)[0, 1] == pytest.approx(cfg.r, abs=0.02)


def test_single_replicate_report():
    cfg = ScenarioConfig(reps=1, seed=12)
    rep = run_study(cfg)
    single = run_replicate(cfg, 0)
    for row in rep.rows:
        est, se, lo, hi = single[row.method]
        assert row.estimate == est and row.ase == se
        assert row.ci_low == lo and row.ci_high == hi
        assert row.cp in (0.0, 1.0)


def test_threads_do_not_change_report(tmp_path):
    cfg = ScenarioConfig(reps=6, N_target=500, n_subset=200, boot_B=20, seed=3)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_study(cfg, threads=1).to_csv(a)
    run_study(cfg, threads=2).to_csv(b)
    assert a.read_bytes() == b.read_bytes()


def test_naive_attenuation_grows_with_error_variance():
    biases = [run_study(ScenarioConfig(reps=60, sigma2=s, seed=1)).row("naive").pct_bias
              for s in (0.25, 0.5, 1.0)]
    assert biases[0] < 0 and biases[0] > biases[1] > biases[2]


@pytest.mark.parametrize("bad", [dict(reps=0), dict(r=1.0), dict(sampling="cluster"),
                                 dict(n_subset=2000), dict(boot_B=1), dict(sigma2=-1)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ScenarioConfig(**bad)


def test_cox_and_survey_replicates_run():
    out = run_replicate(ScenarioConfig(outcome="cox", reps=1, mi_M=3), 0)
    assert set(out) >= {"truth", "naive", "rc_naive_se", "rc_sandwich", "rc_mi"}
    out = run_replicate(ScenarioConfig(sampling="survey", reps=1, boot_B=10, bca=True, bca_B=30), 0)
    assert {"rc_bootstrap_wald", "rc_bootstrap_perc", "rc_bootstrap_bca"} <= set(out)
    for est, se, lo, hi in out.values():
        assert lo <= hi and se > 0
