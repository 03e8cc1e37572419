"""Command-line entry point.

``rcsandwich simulate --config FILE --out DIR [--threads K]`` runs every
``[scenario:NAME]`` section of an INI file. ``rcsandwich analyze --data CSV
--config FILE --out DIR`` fits the two-stage pipeline to a user dataset and
reports the requested variance estimates.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .calibration import Dataset, calibrate, fit_stage1, fit_stage2
from .dataio import ColumnMap, format_float, read_dataset_csv
from .errors import ConfigError, DataError, NumericalError
from .models import BINOMIAL, COXPH, GAUSSIAN
from .resampling import bootstrap_intervals, jackknife_estimates, mi_variance, stratified_bootstrap
from .sandwich import build_stacked_system, naive_variance, sandwich_design, sandwich_variance
from .simulation import ScenarioConfig, run_study

log = logging.getLogger("rcsandwich")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MODEL_KINDS = {"logistic": BINOMIAL, "linear": GAUSSIAN, "cox": COXPH}
METHODS = ("naive", "sandwich", "bootstrap", "mi")
INTERVALS = ("wald", "percentile", "bca")
DEFAULT_B = 500
DEFAULT_M = 25
DEFAULT_LEVEL = 0.95


@dataclass(frozen=True)
class RunConfig:
    command: str
    config_path: Path
    output_path: Path
    seed: int | None = None
    threads: int = 1
    variance_methods: tuple = ("naive", "sandwich")
    interval_types: tuple = ("wald",)
    data_path: Path | None = None
    contrast: float | None = None


# --------------------------------------------------------------------------- config parsing


def _read_ini(path) -> tuple[configparser.ConfigParser, list[str]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cp, text.splitlines()


def _key_line(lines, section, key) -> int | None:
    current = None
    for i, line in enumerate(lines, start=1):
        s = line.strip()
        m = re.fullmatch(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


def _where(path, lines, section, key) -> str:
    line = _key_line(lines, section, key)
    return f"{path}:{line}" if line else f"{path} [{section}]"


def _coerce(raw: str, default, where: str, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: field {key!r} has invalid value {raw!r}") from None


def _scenario_fields(cp, lines, path, section, base) -> dict:
    known = {f.name: f.default for f in fields(ScenarioConfig)}
    out = dict(base)
    for key, raw in cp.items(section, raw=True):
        where = _where(path, lines, section, key)
        if key not in known:
            raise ConfigError(f"{where}: unknown field {key!r} in [{section}]")
        out[key] = _coerce(raw, known[key], where, key)
    return out


def load_scenarios(path) -> list[ScenarioConfig]:
    """Scenarios from ``[scenario:NAME]`` sections; ``[defaults]`` applies to all."""
    cp, lines = _read_ini(path)
    base = {}
    if cp.has_section("defaults"):
        base = _scenario_fields(cp, lines, path, "defaults", {})
    names = [s for s in cp.sections() if s != "defaults"]
    bad = [s for s in names if not s.startswith("scenario:")]
    if bad:
        raise ConfigError(f"{path}: unknown section [{bad[0]}]; expected [defaults] or [scenario:NAME]")
    if not names:
        raise ConfigError(f"{path}: no [scenario:NAME] sections")
    out = []
    for section in names:
        kw = _scenario_fields(cp, lines, path, section, base)
        kw.setdefault("name", section.split(":", 1)[1].strip())
        try:
            out.append(ScenarioConfig(**kw))
        except ConfigError as exc:
            raise ConfigError(f"{path} [{section}]: {exc}") from None
    return out


@dataclass(frozen=True)
class AnalysisSettings:
    name: str = "analysis"
    model: str = "logistic"
    B: int = DEFAULT_B
    M: int = DEFAULT_M
    level: float = DEFAULT_LEVEL
    seed: int = 0
    methods: tuple = ("naive", "sandwich")
    intervals: tuple = ("wald",)
    contrast: float | None = None

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {sorted(MODEL_KINDS)}, got {self.model!r}")
        if self.B < 2 or self.M < 2:
            raise ConfigError("B and M must be >= 2")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown variance method {m!r}; choose from {METHODS}")
        for t in self.intervals:
            if t not in INTERVALS:
                raise ConfigError(f"unknown interval type {t!r}; choose from {INTERVALS}")
        if self.contrast is not None and not self.contrast > 0:
            raise ConfigError("contrast multiplier must be > 0")


_COLUMN_KEYS = {f.name for f in fields(ColumnMap)}
_ANALYSIS_KEYS = {f.name for f in fields(AnalysisSettings)}


def _split_list(raw: str) -> tuple:
    return tuple(p.strip() for p in raw.split(",") if p.strip())


def load_analysis(path) -> tuple[ColumnMap, AnalysisSettings]:
    cp, lines = _read_ini(path)
    for s in cp.sections():
        if s not in ("columns", "analysis"):
            raise ConfigError(f"{path}: unknown section [{s}]; expected [columns] and [analysis]")
    if not cp.has_section("columns"):
        raise ConfigError(f"{path}: analyze needs a [columns] section")
    cols = {}
    for key, raw in cp.items("columns", raw=True):
        if key not in _COLUMN_KEYS:
            raise ConfigError(f"{_where(path, lines, 'columns', key)}: unknown field {key!r} in [columns]")
        cols[key] = _split_list(raw) if key == "z" else raw.strip()
    for key in ("id", "xstar", "subset"):
        if key not in cols:
            raise ConfigError(f"{path} [columns]: missing required field {key!r}")
    try:
        cmap = ColumnMap(**cols)
    except DataError as exc:
        raise ConfigError(f"{path} [columns]: {exc}") from None
    kw = {}
    defaults = AnalysisSettings()
    if cp.has_section("analysis"):
        for key, raw in cp.items("analysis", raw=True):
            where = _where(path, lines, "analysis", key)
            if key not in _ANALYSIS_KEYS:
                raise ConfigError(f"{where}: unknown field {key!r} in [analysis]")
            if key in ("methods", "intervals"):
                kw[key] = _split_list(raw)
            elif key == "contrast":
                kw[key] = _coerce(raw, 1.0, where, key)
            else:
                kw[key] = _coerce(raw, getattr(defaults, key), where, key)
    return cmap, AnalysisSettings(**kw)


# --------------------------------------------------------------------------- analysis


@dataclass(frozen=True)
class CoefficientRow:
    method: str
    interval: str
    coefficient: str
    estimate: float
    se: float
    ci_low: float
    ci_high: float


@dataclass
class AnalysisReport:
    name: str
    kind: str
    level: float
    rows: list = field(default_factory=list)
    contrast: float | None = None
    exposure: str = "xhat"

    def contrast_rows(self) -> list[CoefficientRow]:
        """Exposure effect per ``contrast``-fold change: ``exp(log(c) b)`` for
        logistic/Cox fits, ``log(c) b`` for linear ones."""
        if self.contrast is None:
            return []
        lc = math.log(self.contrast)
        f = (lambda v: v * lc) if self.kind == GAUSSIAN else (lambda v: math.exp(v * lc))
        out = []
        for r in self.rows:
            if r.coefficient != self.exposure:
                continue
            lo, hi = f(r.ci_low), f(r.ci_high)
            out.append(CoefficientRow(r.method, r.interval, r.coefficient, f(r.estimate),
                                      float("nan"), min(lo, hi), max(lo, hi)))
        return out

    def write_csv(self, path, rows=None, contrast=False):
        rows = self.rows if rows is None else rows
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            head = ["analysis", "method", "interval", "coefficient", "estimate", "se", "ci_low",
                    "ci_high"]
            if contrast:
                head = ["analysis", "method", "interval", "coefficient", "contrast",
                        "effect", "ci_low", "ci_high"]
            w.writerow(head)
            for r in rows:
                mid = [format_float(self.contrast)] if contrast else []
                vals = [r.estimate] if contrast else [r.estimate, r.se]
                w.writerow([self.name, r.method, r.interval, r.coefficient, *mid,
                            *(format_float(v) for v in vals),
                            format_float(r.ci_low), format_float(r.ci_high)])

    def to_text(self) -> str:
        lines = [f"{self.name}: model={self.kind} level={self.level}",
                 f"{'method':<12}{'interval':<12}{'coefficient':<14}{'estimate':>10}{'se':>9}"
                 f"{'ci_low':>10}{'ci_high':>10}"]
        for r in self.rows:
            se = "" if math.isnan(r.se) else f"{r.se:.4f}"
            lines.append(f"{r.method:<12}{r.interval:<12}{r.coefficient:<14}{r.estimate:>10.4f}"
                         f"{se:>9}{r.ci_low:>10.4f}{r.ci_high:>10.4f}")
        crow = self.contrast_rows()
        if crow:
            label = "log(c)*b" if self.kind == GAUSSIAN else "exp(log(c)*b)"
            lines += ["", f"contrast c={self.contrast:g}, scale {label}"]
            for r in crow:
                lines.append(f"{r.method:<12}{r.interval:<12}{r.coefficient:<14}{r.estimate:>10.4f}"
                             f"{'':>9}{r.ci_low:>10.4f}{r.ci_high:>10.4f}")
        return "\n".join(lines) + "\n"


def _seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def analyze(data: Dataset, settings: AnalysisSettings) -> AnalysisReport:
    """Two-stage fit plus the requested variance methods and intervals."""
    kind = MODEL_KINDS[settings.model]
    design = data.design()
    stage1 = fit_stage1(data, design)
    xhat = calibrate(stage1, data)
    stage2 = fit_stage2(data, design, xhat, kind)
    beta = stage2.coefficients
    names = data.stage2_names(kind)
    z = norm.ppf(0.5 + settings.level / 2)
    report = AnalysisReport(settings.name, kind, settings.level, contrast=settings.contrast)
    want_wald = "wald" in settings.intervals

    def add(method, interval, se, bounds=None):
        for c, name in enumerate(names):
            if bounds is not None:
                lo, hi = bounds[c]
            elif interval == "wald":
                lo, hi = beta[c] - z * se[c], beta[c] + z * se[c]
            else:
                lo = hi = float("nan")
            report.rows.append(CoefficientRow(method, interval, name, float(beta[c]),
                                              float(se[c]), float(lo), float(hi)))

    se_only = "wald" if want_wald else "none"
    if "naive" in settings.methods:
        add("naive", se_only, np.sqrt(np.diag(naive_variance(stage2, design))))
    if "sandwich" in settings.methods:
        system = build_stacked_system(data, design, stage1, stage2)
        add("sandwich", se_only, sandwich_variance(system, sandwich_design(data, design)).stage2_se)
    if "bootstrap" in settings.methods:
        draws = stratified_bootstrap(data, settings.B, _seed(settings.seed, 1), kind, start=beta)
        jk = jackknife_estimates(data, kind) if "bca" in settings.intervals else None
        iv = bootstrap_intervals(draws, beta, settings.level, jackknife=jk,
                                 types=settings.intervals)
        if draws.n_failed:
            log.warning("%d of %d bootstrap replicates failed", draws.n_failed, settings.B)
        for t, bounds in (("wald", iv.wald), ("percentile", iv.percentile), ("bca", iv.bca)):
            if bounds is not None:
                add("bootstrap", t, iv.se, bounds)
        if not settings.intervals:
            add("bootstrap", "none", iv.se)
    if "mi" in settings.methods:
        mi = mi_variance(data, design, settings.M, _seed(settings.seed, 3), kind)
        add("mi", se_only, mi.se)
    return report


# --------------------------------------------------------------------------- commands


def cmd_simulate(run: RunConfig) -> int:
    scenarios = load_scenarios(run.config_path)
    run.output_path.mkdir(parents=True, exist_ok=True)
    texts = []
    for cfg in scenarios:
        if run.seed is not None:
            cfg = ScenarioConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)},
                                    "seed": run.seed})
        log.info("running %s (%d reps)", cfg.name, cfg.reps)
        report = run_study(cfg, threads=run.threads)
        report.to_csv(run.output_path / f"{cfg.name}.csv")
        text = report.to_text()
        (run.output_path / f"{cfg.name}.txt").write_text(text, encoding="utf-8")
        texts.append(text)
    (run.output_path / "summary.txt").write_text("\n".join(texts), encoding="utf-8")
    sys.stdout.write("\n".join(texts))
    return EXIT_OK


def cmd_analyze(run: RunConfig) -> int:
    cmap, settings = load_analysis(run.config_path)
    over = {}
    if run.variance_methods:
        over["methods"] = run.variance_methods
    if run.interval_types:
        over["intervals"] = run.interval_types
    if run.contrast is not None:
        over["contrast"] = run.contrast
    if run.seed is not None:
        over["seed"] = run.seed
    if over:
        settings = AnalysisSettings(**{**{f.name: getattr(settings, f.name)
                                          for f in fields(settings)}, **over})
    data = read_dataset_csv(run.data_path, cmap)
    report = analyze(data, settings)
    run.output_path.mkdir(parents=True, exist_ok=True)
    report.write_csv(run.output_path / f"{settings.name}_coefficients.csv")
    if settings.contrast is not None:
        report.write_csv(run.output_path / f"{settings.name}_contrast.csv",
                         rows=report.contrast_rows(), contrast=True)
    text = report.to_text()
    (run.output_path / f"{settings.name}.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _csv_choice(allowed):
    def parse(raw):
        items = _split_list(raw)
        for it in items:
            if it not in allowed:
                raise argparse.ArgumentTypeError(f"{it!r} is not one of {', '.join(allowed)}")
        return items
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcsandwich", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run Monte-Carlo scenarios from an INI file")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--seed", type=int, default=None, help="override every scenario's seed")
    a = sub.add_parser("analyze", help="fit a CSV dataset")
    a.add_argument("--data", required=True, type=Path)
    a.add_argument("--config", required=True, type=Path)
    a.add_argument("--out", required=True, type=Path)
    a.add_argument("--methods", type=_csv_choice(METHODS), default=None)
    a.add_argument("--intervals", type=_csv_choice(INTERVALS), default=None)
    a.add_argument("--contrast", type=float, default=None)
    a.add_argument("--seed", type=int, default=None)
    return p


def parse_run_config(argv=None) -> tuple[RunConfig, bool]:
    ns = build_parser().parse_args(argv)
    if ns.command == "simulate":
        if ns.threads < 1:
            raise ConfigError("--threads must be >= 1")
        run = RunConfig("simulate", ns.config, ns.out, ns.seed, ns.threads, (), ())
    else:
        run = RunConfig("analyze", ns.config, ns.out, ns.seed, 1, ns.methods or (),
                        ns.intervals or (), data_path=ns.data, contrast=ns.contrast)
    return run, ns.verbose


def main(argv=None) -> int:
    try:
        run, verbose = parse_run_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"rcsandwich: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return cmd_simulate(run) if run.command == "simulate" else cmd_analyze(run)
    except ConfigError as exc:
        print(f"rcsandwich: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"rcsandwich: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"rcsandwich: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"rcsandwich: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
