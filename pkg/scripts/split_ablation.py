"""Split-training ablation on 5000-row subsamples of the default generated dataset.

    python scripts/split_ablation.py [--learner ridge] [--runs 20] [--out ablation.md]
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from natex import bench
from natex.learners import RegressorSpec

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.ini"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--learner", choices=("ridge", "network"), default="network")
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--parallelism", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args()

    config = bench.load_config(CONFIG, {"runs": args.runs,
                                        "parallelism": args.parallelism})
    if args.learner == "ridge":
        config = replace(config, learner=RegressorSpec.ridge())
    config = replace(config, estimators=bench.SPLIT_ABLATION_ESTIMATORS)
    table = bench.run_benchmark(config)
    text = bench.emit_table(table, "markdown")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(table.provenance, file=sys.stderr)


if __name__ == "__main__":
    main()
