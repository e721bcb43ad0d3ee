"""Short-sequence multi-node runs: collective vs ODC under full and hybrid sharding."""

import argparse
import logging
import sys

from odcsim.config import ExperimentConfig
from odcsim.experiment import emit_report, run_experiment

COLUMNS = ("scheme", "sharding", "devices", "sim_total_time", "exposed_comm", "intra_volume", "inter_volume")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--devices", default="16,32")
    p.add_argument("--workload", default="uniform:lo=64,hi=1024")
    p.add_argument("--num-samples", type=int, default=1024)
    p.add_argument("--format", choices=["json", "csv", "md"], default="md")
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR)

    rows = []
    for D in (int(v) for v in args.devices.split(",")):
        base = ExperimentConfig(workload=args.workload, num_samples=args.num_samples, devices=D)
        for scheme, sharding in [("collective", "full"), ("odc", "full"), ("odc", "hybrid")]:
            rows.append(run_experiment(base.with_(scheme=scheme, sharding=sharding))[-1])
    sys.stdout.buffer.write(emit_report(rows, args.format, COLUMNS))


if __name__ == "__main__":
    main()
