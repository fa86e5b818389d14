"""Median squared error along the n, correlation or cross-entropy axis.

    python scripts/sweeps.py --axis entropy --learner ridge --runs 5 --out entropy.csv
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from natex import bench
from natex.cli import DEFAULT_SWEEP_LEVELS, SWEEPS
from natex.learners import RegressorSpec

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.ini"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axis", choices=tuple(SWEEPS), required=True)
    ap.add_argument("--learner", choices=("ridge", "network"), default="network")
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--out")
    args = ap.parse_args()

    config = bench.load_config(CONFIG, {"runs": args.runs})
    if args.learner == "ridge":
        config = replace(config, learner=RegressorSpec.ridge())
    if args.axis == "entropy":
        config = replace(config, estimators=bench.NOISE_SWEEP_ESTIMATORS)
    levels = DEFAULT_SWEEP_LEVELS[args.axis]
    result = SWEEPS[args.axis](config, levels)
    text = bench.emit_sweep(result)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


if __name__ == "__main__":
    main()
