"""Per-client volume of one layer's gather / reduce, symbolic in K, for a grid of clusters."""

import argparse
import sys

from odcsim.cli import volume_rows
from odcsim.experiment import emit_report

COLUMNS = ("devices", "per_node", "scheme", "sharding", "op", "intra", "inter", "total")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--devices", default="8,16,32,64")
    p.add_argument("--per-node", default="1,2,4,8")
    p.add_argument("--format", choices=["json", "csv", "md"], default="md")
    args = p.parse_args()

    rows = []
    for D in (int(v) for v in args.devices.split(",")):
        for G in (int(v) for v in args.per_node.split(",")):
            if D % G:
                continue
            # K = 1 makes every entry the coefficient of K
            rows.extend({"devices": D, "per_node": G, **r} for r in volume_rows(D, G, 1) if r["op"] == "param-gather")
    sys.stdout.buffer.write(emit_report(rows, args.format, COLUMNS))


if __name__ == "__main__":
    main()
