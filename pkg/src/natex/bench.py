"""Benchmark runs, sweeps and their CSV / markdown reports.

A run draws a subsample, fresh outcome noise and a fresh assignment from a
seed derived only from ``(master_seed, run_index)``, so runs are
independent work items and results do not depend on how they are
scheduled.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (FullDataset, GenerationConfig, SchemaError, add_outcome_noise,
                      generate_dataset, generate_outcomes, load_csv, observe,
                      perturb_propensities, sample_treatment)
from .estimators import DISPLAY_NAMES, REGISTRY, run_estimator
from .learners import PROPENSITY_SPEC, RegressorSpec, fit_propensity
from .metrics import (RunSummary, binary_cross_entropy, distance_correlation,
                      quartile_summary, squared_error)

__all__ = [
    "PROPENSITY_SOURCES",
    "MAIN_ESTIMATORS",
    "SPLIT_ABLATION_ESTIMATORS",
    "NOISE_SWEEP_ESTIMATORS",
    "BenchmarkConfig",
    "RunRecord",
    "BenchmarkTable",
    "SweepResult",
    "run_seed",
    "run_benchmark",
    "sweep_by_n",
    "sweep_by_correlation",
    "sweep_by_entropy",
    "emit_table",
    "parse_table_csv",
    "emit_sweep",
    "parse_sweep_csv",
    "emit_run_log",
    "load_config",
]

PROPENSITY_SOURCES = ("true", "estimated", "estimated-then-truncated")
MAIN_ESTIMATORS = ("regression-discontinuity", "propensity-stratification",
                     "direct-difference", "adjusted-direct", "horvitz-thompson",
                     "off-policy", "double-double", "doubly-robust",
                     "direct-prediction")
SPLIT_ABLATION_ESTIMATORS = ("doubly-robust", "dr-weighting", "dr-2x-weighting", "dr-split",
                     "dr-split-weight", "double-double")
NOISE_SWEEP_ESTIMATORS = ("regression-discontinuity", "propensity-stratification",
                      "adjusted-direct", "off-policy", "double-double",
                      "doubly-robust")
TABLE_COLUMNS = ("Method", "Mean", "1st Quartile", "2nd Quartile", "3rd Quartile",
                 "Time (s)")
DCOR_MAX_ROWS = 2000


@dataclass(frozen=True)
class BenchmarkConfig:
    dataset: GenerationConfig | str = field(default_factory=GenerationConfig)
    estimators: tuple = MAIN_ESTIMATORS
    runs: int = 20
    subsample: int | None = 5000
    master_seed: int = 0
    propensity_source: str = "estimated-then-truncated"
    rd_window: float = 0.1
    strat_bins: int = 10
    parallelism: int = 1
    learner: RegressorSpec = field(default_factory=RegressorSpec)
    propensity_model: RegressorSpec = PROPENSITY_SPEC
    outcome_noise_sd: float = 0.0
    propensity_noise: float = 0.0
    record_dcor: bool = False
    timing: bool = True
    max_failure_fraction: float = 0.5

    def __post_init__(self):
        if self.runs < 1:
            raise SchemaError("runs must be at least 1")
        unknown = [e for e in self.estimators if e not in REGISTRY]
        if unknown:
            raise SchemaError(f"unknown estimators: {', '.join(unknown)}")
        if self.propensity_source not in PROPENSITY_SOURCES:
            raise SchemaError(f"propensity_source must be one of {PROPENSITY_SOURCES}")
        if self.parallelism < 1:
            raise SchemaError("parallelism must be at least 1")
        object.__setattr__(self, "estimators", tuple(self.estimators))

    def fingerprint(self) -> str:
        d = asdict(self)
        d.pop("parallelism")
        d.pop("timing")
        return hashlib.sha1(repr(sorted(d.items())).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class RunRecord:
    run: int
    estimator: str
    estimate: float
    truth: float
    squared_error: float
    elapsed: float
    error: str = ""


@dataclass(frozen=True)
class BenchmarkTable:
    rows: tuple  # (estimator_name, RunSummary)
    provenance: str
    records: tuple = ()
    axis: dict = field(default_factory=dict)  # per-run sweep axis metrics

    def summary(self, name: str) -> RunSummary:
        return dict(self.rows)[name]


@dataclass(frozen=True)
class SweepResult:
    axis_name: str
    axis_values: tuple
    series: dict  # estimator -> tuple of (median, q1, q3), one per axis value

    def __post_init__(self):
        for name, s in self.series.items():
            if len(s) != len(self.axis_values):
                raise ValueError(f"series for {name} does not match the axis")


def run_seed(master_seed: int, k: int) -> int:
    return int(np.random.SeedSequence([master_seed, k]).generate_state(1)[0])


def _base_dataset(config):
    if isinstance(config.dataset, GenerationConfig):
        return generate_dataset(config.dataset), True
    return load_csv(config.dataset, mode="full"), False


def _run_dataset(base, regenerate, config, rng):
    n = base.n
    if config.subsample is not None and config.subsample < n:
        idx = np.sort(rng.choice(n, size=config.subsample, replace=False))
        base = base.subset(idx)
    if regenerate:
        g = config.dataset
        y0, y1 = generate_outcomes(base.propensity, g.effect_scale,
                                   g.outcome_noise_sd, int(rng.integers(2**32)))
        base = base.with_outcomes(y1, y0)
    if config.outcome_noise_sd > 0:
        s1, s0 = rng.integers(2**32, size=2)
        base = base.with_outcomes(
            add_outcome_noise(base.y1, config.outcome_noise_sd, int(s1)),
            add_outcome_noise(base.y0, config.outcome_noise_sd, int(s0)))
    return base


def _one_run(args):
    config, base, regenerate, k = args
    rng = np.random.default_rng(run_seed(config.master_seed, k))
    full = _run_dataset(base, regenerate, config, rng)
    z = sample_treatment(full.propensity, int(rng.integers(2**32)))
    obs = observe(full, z)
    prop_seed, noise_seed, dcor_seed = (int(s) for s in rng.integers(2**32, size=3))
    if config.propensity_source == "true":
        p = full.propensity
    else:
        p = fit_propensity(full.covariates, z, config.propensity_model, prop_seed,
                           truncate=config.propensity_source != "estimated")
    if config.propensity_noise > 0:
        p = perturb_propensities(p, config.propensity_noise, noise_seed)

    axis = {"bce": binary_cross_entropy(p, z)}
    if config.record_dcor:
        m = min(full.n, DCOR_MAX_ROWS)
        rows = np.random.default_rng(dcor_seed).choice(full.n, size=m, replace=False)
        pt = full.propensity[rows]
        axis["dcor"] = 0.5 * (distance_correlation(pt, full.y1[rows])
                              + distance_correlation(pt, full.y0[rows]))

    records = []
    opts = {"rd_window": config.rd_window, "strat_bins": config.strat_bins}
    est_seeds = rng.integers(2**32, size=len(config.estimators))
    for name, s in zip(config.estimators, est_seeds):
        try:
            res = run_estimator(name, obs, p, config.learner, int(s),
                                timed=config.timing, **opts)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            records.append(RunRecord(k, name, float("nan"), full.true_ate,
                                     float("nan"), 0.0, f"{type(exc).__name__}: {exc}"))
            continue
        records.append(RunRecord(k, name, res.estimate, full.true_ate,
                                 squared_error(res.estimate, full.true_ate),
                                 res.elapsed))
    return k, records, axis


def run_benchmark(config: BenchmarkConfig) -> BenchmarkTable:
    """Evaluate every configured estimator over ``config.runs`` seeded runs."""
    base, regenerate = _base_dataset(config)
    jobs = [(config, base, regenerate, k) for k in range(config.runs)]
    slots = [None] * config.runs
    if config.parallelism > 1:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            for k, records, axis in pool.map(_one_run, jobs):
                slots[k] = (records, axis)
    else:
        for job in jobs:
            k, records, axis = _one_run(job)
            slots[k] = (records, axis)

    all_records = [r for records, _ in slots for r in records]
    rows = []
    for name in config.estimators:
        mine = [r for r in all_records if r.estimator == name]
        ok = [r for r in mine if not r.error]
        failures = len(mine) - len(ok)
        if ok:
            summary = quartile_summary([r.squared_error for r in ok],
                                       [r.elapsed for r in ok], failures)
        else:
            nan = float("nan")
            summary = RunSummary(nan, nan, nan, nan, nan, 0, failures)
        rows.append((name, summary))
    axis = {key: tuple(a[key] for _, a in slots) for key in slots[0][1]}
    provenance = (f"config={config.fingerprint()} master_seed={config.master_seed} "
                  f"runs={config.runs} propensity={config.propensity_source} "
                  "time=estimator call only, shared propensity fit excluded")
    return BenchmarkTable(tuple(rows), provenance, tuple(all_records), axis)


def failure_fraction(table: BenchmarkTable) -> float:
    worst = 0.0
    for _, s in table.rows:
        total = s.count + s.failures
        if total:
            worst = max(worst, s.failures / total)
    return worst


# -- sweeps ------------------------------------------------------------------

def _series(tables, estimators):
    series = {}
    for name in estimators:
        out = []
        for t in tables:
            s = t.summary(name)
            out.append((s.median, s.q1, s.q3))
        series[name] = tuple(out)
    return series


def sweep_by_n(config: BenchmarkConfig, ns) -> SweepResult:
    """Benchmark at each subsample size in ``ns``."""
    tables = [run_benchmark(replace(config, subsample=int(n))) for n in ns]
    return SweepResult("n", tuple(float(n) for n in ns),
                       _series(tables, config.estimators))


def sweep_by_correlation(config: BenchmarkConfig, noise_sds) -> SweepResult:
    """Add outcome noise at each level; the axis is the median distance
    correlation between the true propensities and the potential outcomes."""
    tables = []
    for sd in noise_sds:
        if sd < 0:
            raise ValueError("noise levels must be nonnegative")
        tables.append(run_benchmark(replace(config, outcome_noise_sd=float(sd),
                                            record_dcor=True)))
    axis = tuple(float(np.median(t.axis["dcor"])) for t in tables)
    return SweepResult("distance_correlation", axis, _series(tables, config.estimators))


def sweep_by_entropy(config: BenchmarkConfig, levels) -> SweepResult:
    """Perturb the propensities handed to the estimators at each level; the
    axis is the median cross entropy between those propensities and ``z``."""
    tables = []
    for level in levels:
        if level < 0:
            raise ValueError("noise levels must be nonnegative")
        tables.append(run_benchmark(replace(config, propensity_noise=float(level))))
    axis = tuple(float(np.median(t.axis["bce"])) for t in tables)
    return SweepResult("cross_entropy", axis, _series(tables, config.estimators))


# -- reports -----------------------------------------------------------------

def _sci(x: float) -> str:
    return f"{x:.2e}"


def emit_table(table: BenchmarkTable, format: str = "markdown",
               display_names: bool = False) -> str:
    """Render with columns Method, Mean, quartiles and Time (s) in 3-digit
    scientific notation."""
    if not table.rows:
        raise ValueError("empty table")

    def label(name):
        return DISPLAY_NAMES.get(name, name) if display_names else name

    body = [[label(name), _sci(s.mean), _sci(s.q1), _sci(s.median), _sci(s.q3),
             _sci(s.time)] for name, s in table.rows]
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        w.writerows(body)
        return buf.getvalue()
    if format == "markdown":
        lines = ["| " + " | ".join(TABLE_COLUMNS) + " |",
                 "|" + "|".join(["---"] * len(TABLE_COLUMNS)) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in body]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {format!r}")


def parse_table_csv(text: str) -> BenchmarkTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != TABLE_COLUMNS:
        raise SchemaError(f"unexpected table header {header}")
    rows = []
    for r in reader:
        mean, q1, med, q3, t = map(float, r[1:])
        rows.append((r[0], RunSummary(mean, q1, med, q3, t, 0)))
    return BenchmarkTable(tuple(rows), "parsed")


def emit_run_log(table: BenchmarkTable) -> str:
    """Per-run records as CSV, for recomputing or auditing the summaries."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "estimator", "estimate", "truth", "squared_error",
                "elapsed", "error"])
    for r in table.records:
        w.writerow([r.run, r.estimator, repr(r.estimate), repr(r.truth),
                    repr(r.squared_error), repr(r.elapsed), r.error])
    return buf.getvalue()


def emit_sweep(result: SweepResult, format: str = "csv") -> str:
    """Long-format rows ``estimator, axis_value, median, q1, q3``."""
    if format != "csv":
        raise ValueError(f"unknown format {format!r}")
    if not result.series:
        raise ValueError("empty sweep")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", result.axis_name, "median", "q1", "q3"])
    for name, s in result.series.items():
        for x, (med, q1, q3) in zip(result.axis_values, s):
            w.writerow([name, repr(x), repr(med), repr(q1), repr(q3)])
    return buf.getvalue()


def parse_sweep_csv(text: str) -> SweepResult:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    axis_name = header[1]
    axis, series = [], {}
    for name, x, med, q1, q3 in reader:
        x = float(x)
        if x not in axis:
            axis.append(x)
        series.setdefault(name, []).append((float(med), float(q1), float(q3)))
    return SweepResult(axis_name, tuple(axis),
                       {k: tuple(v) for k, v in series.items()})


# -- config files ------------------------------------------------------------

def _parse_list(raw):
    return tuple(x.strip() for x in raw.replace("\n", ",").split(",") if x.strip())


def load_config(path=None, overrides=None) -> BenchmarkConfig:
    """Read an INI-style config with ``[dataset]``, ``[learner]`` and
    ``[benchmark]`` sections. ``NATEX_SEED`` overrides ``master_seed``."""
    parser = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise SchemaError(f"config file {path} not found")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise SchemaError(f"{path}: {exc}") from None
    try:
        ds = dict(parser["dataset"]) if parser.has_section("dataset") else {}
        dataset = ds["csv"] if "csv" in ds else GenerationConfig.from_mapping(ds)
        learner = RegressorSpec.from_mapping(
            dict(parser["learner"]) if parser.has_section("learner") else {})
        b = dict(parser["benchmark"]) if parser.has_section("benchmark") else {}
        kwargs = {"dataset": dataset, "learner": learner}
        if "estimators" in b:
            kwargs["estimators"] = _parse_list(b["estimators"])
        for key in ("runs", "master_seed", "strat_bins", "parallelism"):
            if key in b:
                kwargs[key] = int(b[key])
        if "subsample" in b:
            kwargs["subsample"] = None if b["subsample"].strip().lower() in (
                "", "none") else int(b["subsample"])
        for key in ("rd_window", "max_failure_fraction"):
            if key in b:
                kwargs[key] = float(b[key])
        if "propensity_source" in b:
            kwargs["propensity_source"] = b["propensity_source"].strip()
        if "timing" in b:
            kwargs["timing"] = parser.getboolean("benchmark", "timing")
        kwargs.update(overrides or {})
        env_seed = os.environ.get("NATEX_SEED")
        if env_seed is not None:
            kwargs["master_seed"] = int(env_seed)
        return BenchmarkConfig(**kwargs)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"invalid config: {exc}") from None
