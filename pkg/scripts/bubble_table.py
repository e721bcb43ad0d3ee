"""Bubble rate and throughput per strategy, scheme and minibatch size on one workload.

    python scripts/bubble_table.py --workload lognormal:mu=9.5,sigma=1.5
"""

import argparse
import logging
import sys

from odcsim.config import ExperimentConfig
from odcsim.experiment import emit_report, run_experiment

COMBOS = [("local-sort", "collective"), ("lb-micro", "collective"), ("lb-micro", "odc"), ("lb-mini", "odc")]
COLUMNS = ("strategy", "scheme", "minibatch_size", "bubble_rate", "sim_bubble_rate", "samples_per_time")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--workload", default=ExperimentConfig.workload)
    p.add_argument("--minibatch-sizes", default="1,2,4,8")
    p.add_argument("--devices", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["json", "csv", "md"], default="md")
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR)

    rows = []
    for mb in (int(v) for v in args.minibatch_sizes.split(",")):
        for strategy, scheme in COMBOS:
            cfg = ExperimentConfig(workload=args.workload, devices=args.devices, per_node=min(8, args.devices),
                                   minibatch_size=mb, strategy=strategy, scheme=scheme, seed=args.seed)
            rows.append(run_experiment(cfg)[-1])
    sys.stdout.buffer.write(emit_report(rows, args.format, COLUMNS))


if __name__ == "__main__":
    main()
