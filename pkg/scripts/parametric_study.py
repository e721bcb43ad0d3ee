"""Acceleration ratio of ODC over collectives along each parametric axis.

    python scripts/parametric_study.py --seed 0 --jobs 4 > controlled.md
"""

import argparse
import logging
import sys

from odcsim.config import ExperimentConfig, SweepSpec
from odcsim.experiment import SWEEP_COLUMNS, emit_report, run_sweep

AXES = {
    "minibatch_size": (1, 2, 4, 8, 16),
    "max_length_ratio": (0.5, 1, 2),
    "packing_ratio": (1, 2, 4),
    "devices": (8, 16, 32),
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=["json", "csv", "md"], default="md")
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR)

    base = ExperimentConfig(seed=args.seed)
    rows = []
    for axis, values in AXES.items():
        rows.extend(run_sweep(SweepSpec(axis, values, base), jobs=args.jobs))
    sys.stdout.buffer.write(emit_report(rows, args.format, SWEEP_COLUMNS))


if __name__ == "__main__":
    main()
