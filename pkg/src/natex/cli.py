"""Command-line entry point: ``natex <subcommand>`` or ``python -m natex``.

Exit codes: 0 on success, 2 on a config or schema error, 3 when the share of
failed estimator runs exceeds ``max_failure_fraction``.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .dataset import (SchemaError, generate_dataset, load_csv, read_treatment_column,
                      sample_treatment, write_csv)
from .estimators import draw_split
from .learners import PROPENSITY_SPEC, RegressorSpec, WeightScheme, fit_propensity
from .metrics import DatasetAttributes, calibration_curve, dataset_attributes
from .variance import theorem1_terms

EXIT_OK, EXIT_CONFIG, EXIT_FAILURES = 0, 2, 3

DEFAULT_SWEEP_LEVELS = {
    "n": [1000 * k for k in range(1, 16)],
    "correlation": [0.0, 0.1, 0.25, 0.5, 1.0, 2.0],
    "entropy": [0.0, 0.5, 1.0, 1.5, 2.0, 3.0],
}
SWEEPS = {"n": bench.sweep_by_n, "correlation": bench.sweep_by_correlation,
          "entropy": bench.sweep_by_entropy}
SCHEMES = {"unit": WeightScheme.UNIT, "single": WeightScheme.SINGLE,
           "double": WeightScheme.DOUBLE}


def _seed(default: int) -> int:
    env = os.environ.get("NATEX_SEED")
    return int(env) if env is not None else default


def _write(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _with_learner(config, learner):
    if learner is None:
        return config
    spec = (RegressorSpec.ridge(config.learner.ridge_lambda) if learner == "ridge"
            else replace(config.learner, kind="network"))
    return replace(config, learner=spec)


def _treatment(path, full, seed):
    z = read_treatment_column(path)
    return sample_treatment(full.propensity, seed) if z is None else z


def cmd_generate(args) -> int:
    config = bench.load_config(args.config)
    if not isinstance(config.dataset, bench.GenerationConfig):
        raise SchemaError("generate needs a [dataset] section without csv=")
    gen = config.dataset
    full = generate_dataset(gen)
    z = sample_treatment(full.propensity, _seed(gen.seed))
    write_csv(args.out, full, z=z)
    return EXIT_OK


def cmd_attributes(args) -> int:
    full = load_csv(args.data, mode="full")
    attrs = dataset_attributes(full, _treatment(args.data, full, _seed(args.seed)))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(DatasetAttributes.HEADER)
    w.writerow(attrs.to_csv_row().split(","))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    overrides = {}
    if args.runs is not None:
        overrides["runs"] = args.runs
    if args.parallelism is not None:
        overrides["parallelism"] = args.parallelism
    config = _with_learner(bench.load_config(args.config, overrides), args.learner)
    table = bench.run_benchmark(config)
    _write(bench.emit_table(table, args.format), args.out)
    if args.log:
        Path(args.log).write_text(bench.emit_run_log(table), encoding="utf-8")
    print(table.provenance, file=sys.stderr)
    if bench.failure_fraction(table) > config.max_failure_fraction:
        print("estimator failure threshold exceeded", file=sys.stderr)
        return EXIT_FAILURES
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _with_learner(bench.load_config(args.config), args.learner)
    if args.axis == "entropy" and args.estimators is None:
        config = replace(config, estimators=bench.NOISE_SWEEP_ESTIMATORS)
    if args.estimators is not None:
        config = replace(config, estimators=tuple(args.estimators.split(",")))
    if args.levels is not None:
        levels = [float(x) for x in args.levels.split(",")]
    else:
        levels = DEFAULT_SWEEP_LEVELS[args.axis]
    if args.axis == "n":
        levels = [int(x) for x in levels]
    result = SWEEPS[args.axis](config, levels)
    _write(bench.emit_sweep(result), args.out)
    return EXIT_OK


def cmd_verify_variance(args) -> int:
    gen = bench.GenerationConfig(n=args.n, d=args.d, seed=_seed(args.seed))
    full = generate_dataset(gen)
    split = draw_split(full.n, np.random.default_rng(_seed(args.seed)))
    report = theorem1_terms(full, split, SCHEMES[args.scheme], args.lam)
    print(report.summary())
    return EXIT_OK


def cmd_calibration(args) -> int:
    full = load_csv(args.data, mode="full")
    seed = _seed(args.seed)
    z = _treatment(args.data, full, seed)
    p_hat = fit_propensity(full.covariates, z, PROPENSITY_SPEC, seed)
    _write(calibration_curve(p_hat, z, args.bins).to_csv(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="natex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("attributes", help="print dataset attributes")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0,
                   help="assignment seed when the file has no z column")
    p.set_defaults(func=cmd_attributes)

    p = sub.add_parser("benchmark", help="run the estimator benchmark")
    p.add_argument("--config")
    p.add_argument("--learner", choices=("ridge", "network"))
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--out")
    p.add_argument("--log", help="also write the per-run records here")
    p.add_argument("--runs", type=int)
    p.add_argument("--parallelism", type=int)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sweep", help="benchmark along one axis")
    p.add_argument("--axis", required=True, choices=tuple(SWEEPS))
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--learner", choices=("ridge", "network"))
    p.add_argument("--levels", help="comma-separated axis levels")
    p.add_argument("--estimators", help="comma-separated registry names")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-variance", help="closed-form variance vs enumeration")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--scheme", choices=tuple(SCHEMES), default="double")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lam", type=float, default=1e-6)
    p.set_defaults(func=cmd_verify_variance)

    p = sub.add_parser("calibration", help="calibration curve of the propensity fit")
    p.add_argument("--data", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibration)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
