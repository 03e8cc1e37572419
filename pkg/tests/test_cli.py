import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rcsandwich.calibration import Dataset
from rcsandwich.cli import AnalysisSettings, analyze, load_analysis, main
from rcsandwich.dataio import read_dataset_csv, write_dataset_csv
from rcsandwich.simulation import ScenarioConfig, gen_srs_dataset

from conftest import ROOT, simulated

EXAMPLE_CSV = ROOT / "data" / "example_srs.csv"
EXAMPLE_INI = ROOT / "configs" / "example_analyze.ini"

COLUMNS = """[columns]
id = id
outcome = y
xstar = xstar
xstarstar = xstarstar
z = z
subset = subset
"""


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_unknown_field_is_named(tmp_path, capsys):
    cfg = write(tmp_path / "s.ini", "[scenario:a]\nreps = 3\nsigma = 0.5\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "'sigma'" in err and "s.ini:3" in err


def test_zero_reps_rejected(tmp_path, capsys):
    cfg = write(tmp_path / "s.ini", "[scenario:a]\nreps = 0\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "reps" in capsys.readouterr().err


def test_bad_value_and_missing_file(tmp_path):
    cfg = write(tmp_path / "s.ini", "[scenario:a]\nreps = many\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 2


def test_simulate_threads_identical(tmp_path):
    cfg = write(tmp_path / "s.ini",
                "[defaults]\nreps = 4\nN_target = 400\nn_subset = 150\n\n"
                "[scenario:one]\nsigma2 = 0.5\n\n[scenario:two]\noutcome = cox\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b), "--threads", "2"]) == 0
    for name in ("one.csv", "two.csv", "one.txt", "summary.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = read_rows(a / "one.csv")
    assert list(rows[0]) == ["scenario", "method", "coefficient", "estimate", "pct_bias", "mad",
                             "ase", "cp", "ci_low", "ci_high"]


def test_shipped_presets_parse():
    from rcsandwich.cli import load_scenarios
    for ini in sorted((ROOT / "configs").glob("*.ini")):
        if ini.name.startswith("example"):
            load_analysis(ini)
        else:
            assert load_scenarios(ini)


def test_example_round_trip_matches_in_memory(tmp_path):
    out = tmp_path / "out"
    assert main(["analyze", "--data", str(EXAMPLE_CSV), "--config", str(EXAMPLE_INI),
                 "--out", str(out)]) == 0
    _, settings = load_analysis(EXAMPLE_INI)
    data = gen_srs_dataset(ScenarioConfig(name="example", sigma2=0.25, r=0.3, reps=1), 0)
    report = analyze(data, settings)
    report.write_csv(tmp_path / "mem.csv")
    assert (out / "example_coefficients.csv").read_bytes() == (tmp_path / "mem.csv").read_bytes()


def test_contrast_column(tmp_path):
    out = tmp_path / "out"
    assert main(["analyze", "--data", str(EXAMPLE_CSV), "--config", str(EXAMPLE_INI),
                 "--out", str(out), "--methods", "naive,sandwich", "--intervals", "wald",
                 "--contrast", "1.2"]) == 0
    coef = {(r["method"], r["coefficient"]): r for r in read_rows(out / "example_coefficients.csv")}
    for r in read_rows(out / "example_contrast.csv"):
        beta = float(coef[(r["method"], "xhat")]["estimate"])
        assert float(r["effect"]) == pytest.approx(math.exp(math.log(1.2) * beta), rel=1e-15)
        assert float(r["ci_low"]) <= float(r["effect"]) <= float(r["ci_high"])


def test_linear_contrast_is_not_exponentiated():
    data = simulated(0, N_target=400, n_subset=150)
    lin = Dataset(data[0].unit_id, data[0].xstar, data[0].xstarstar, data[0].z, data[0].subset,
                  y=data[0].x_true + data[0].z[:, 0])
    rep = analyze(lin, AnalysisSettings(model="linear", contrast=1.2))
    r = rep.contrast_rows()[0]
    beta = [row for row in rep.rows if row.coefficient == "xhat"][0].estimate
    assert r.estimate == pytest.approx(math.log(1.2) * beta)


def test_degenerate_calibration(tmp_path):
    data, _ = simulated(0, N_target=400, n_subset=150)
    full = Dataset(data.unit_id, data.xstar, data.xstar, data.z, np.ones(len(data), bool),
                   y=data.y, z_names=("z",))
    rep = analyze(full, AnalysisSettings(methods=("naive", "sandwich")))
    se = {(r.method, r.coefficient): r.se for r in rep.rows}
    assert se[("sandwich", "xhat")] == pytest.approx(se[("naive", "xhat")], rel=0.1)


def test_schema_errors_exit_3(tmp_path):
    ini = write(tmp_path / "a.ini", COLUMNS)
    bad = tmp_path / "bad.csv"
    bad.write_text("id,y,xstar,xstarstar,z,subset\n1,0,0.1,0.3,0.2,0\n2,1,0.2,,0.1,1\n")
    assert main(["analyze", "--data", str(bad), "--config", str(ini), "--out", str(tmp_path)]) == 3
    short = tmp_path / "short.csv"
    short.write_text("id,y,xstar,subset\n1,0,0.1,0\n")
    assert main(["analyze", "--data", str(short), "--config", str(ini), "--out", str(tmp_path)]) == 3


def test_numerical_failure_exit_4(tmp_path):
    n = 40
    x = np.linspace(-2, 2, n)
    sub = np.arange(n) % 2 == 0
    d = Dataset(np.arange(n), x, np.where(sub, x, np.nan), np.zeros((n, 0)), sub,
                y=(x > 0).astype(float))
    path = tmp_path / "sep.csv"
    write_dataset_csv(d, path)
    ini = write(tmp_path / "a.ini", COLUMNS.replace("z = z\n", ""))
    assert main(["analyze", "--data", str(path), "--config", str(ini), "--out", str(tmp_path)]) == 4


def test_unknown_method_flag(tmp_path):
    assert main(["analyze", "--data", str(EXAMPLE_CSV), "--config", str(EXAMPLE_INI),
                 "--out", str(tmp_path), "--methods", "jackknife"]) == 2


@given(arrays(float, 12, elements=st.floats(-1e300, 1e300, allow_nan=False,
                                            allow_subnormal=True)))
def test_csv_round_trip_exact(values):
    import tempfile
    from pathlib import Path

    sub = np.arange(12) % 3 == 0
    d = Dataset(np.arange(12), values, np.where(sub, values[::-1], np.nan), values[:, None] / 3,
                sub, y=values * 2, stratum=np.arange(12) % 2, cluster=np.arange(12),
                weight=np.abs(values) + 1.0, z_names=("z",))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.csv"
        cmap = write_dataset_csv(d, path)
        back = read_dataset_csv(path, cmap)
    for name in ("xstar", "xstarstar", "z", "y", "weight", "subset", "stratum", "cluster",
                 "unit_id"):
        np.testing.assert_array_equal(getattr(back, name), getattr(d, name))


def test_survival_round_trip(tmp_path, srs_cox):
    data, _ = srs_cox
    cmap = write_dataset_csv(data, tmp_path / "c.csv")
    back = read_dataset_csv(tmp_path / "c.csv", cmap)
    np.testing.assert_array_equal(back.survival.time, data.survival.time)
    np.testing.assert_array_equal(back.survival.status, data.survival.status)
