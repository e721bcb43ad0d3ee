"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 infeasible workload,
4 internal invariant or protocol violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from odcsim.commsim import ClusterSpec, Op, comm_volume, hybrid_volume, simulate
from odcsim.config import FORMATS, SWEEP_AXES, ExperimentConfig, SweepSpec
from odcsim.errors import ConfigError, FormatError, InfeasibleError, InvariantViolation, ParameterError, ProtocolError
from odcsim.experiment import REPORT_COLUMNS, SWEEP_COLUMNS, build_plan, emit_report, run_experiment, run_sweep
from odcsim.partition import Strategy
from odcsim.primitives import verify_equivalence
from odcsim.runtime import Scheme

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INVARIANT = 0, 2, 3, 4

# flag name -> config field
_OVERRIDES = {
    "strategy": "strategy",
    "scheme": "scheme",
    "sharding": "sharding",
    "minibatch_size": "minibatch_size",
    "packing_ratio": "packing_ratio",
    "devices": "devices",
    "per_node": "per_node",
    "seed": "seed",
    "format": "format",
    "workload": "workload",
    "lengths_file": "lengths_file",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config; flags override its fields")
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--sharding", choices=["full", "hybrid"])
    p.add_argument("--minibatch-size", type=int)
    p.add_argument("--packing-ratio", type=float)
    p.add_argument("--devices", type=int)
    p.add_argument("--per-node", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--workload", help="distribution spec, e.g. lognormal:mu=9.5,sigma=1.5")
    p.add_argument("--lengths-file", help="one sequence length per line; overrides --workload")
    p.add_argument("-o", "--output", type=Path, help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odcsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="plan, evaluate and simulate one configuration")
    _add_config_flags(p)
    p.add_argument("--trace", type=Path, help="write a Chrome trace of the first step")

    p = sub.add_parser("sweep", help="acceleration ratio of ODC over collectives along one axis")
    _add_config_flags(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated, strictly increasing")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("partition", help="dump the batching solution of every step as JSON")
    _add_config_flags(p)
    p.add_argument("--step", type=int, help="only this step")

    p = sub.add_parser("volume", help="per-layer communication volume table")
    p.add_argument("--devices", type=int, default=8)
    p.add_argument("--per-node", type=int, default=8)
    p.add_argument("--shard-elems", type=int, default=1, help="K, elements per device shard")
    p.add_argument("--format", choices=FORMATS, default="md")
    p.add_argument("-o", "--output", type=Path)

    p = sub.add_parser("verify-primitives", help="randomized gather / scatter-accumulate equivalence suite")
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--minibatches", type=int, default=1000, help="number of random schedules")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threaded", action="store_true", help="real threads instead of seeded replay")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config.read_text()) if args.config else ExperimentConfig()
    changes = {field: getattr(args, flag) for flag, field in _OVERRIDES.items()
               if getattr(args, flag, None) is not None}
    if "devices" in changes and "per_node" not in changes:
        changes["per_node"] = min(cfg.per_node, changes["devices"])
    return cfg.from_dict({**cfg.to_dict(), **changes})


def _parse_values(text: str, axis: str) -> tuple:
    try:
        cast = int if axis in ("minibatch_size", "devices") else float
        return tuple(cast(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError("values", str(exc)) from None


def _write(data: bytes, output: Path | None) -> None:
    if output is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        output.write_bytes(data)


def volume_rows(devices: int, per_node: int, shard_elems: int) -> list[dict]:
    cluster = ClusterSpec(devices=devices, per_node=per_node, shard_elems=shard_elems)
    rows = []
    for scheme in Scheme:
        for op in Op:
            v = comm_volume(scheme, op, cluster)
            rows.append({"scheme": scheme.value, "sharding": "full", "op": op.value,
                         "intra": str(v.intra), "inter": str(v.inter), "total": str(v.total)})
    if cluster.nodes > 1:
        for op in Op:
            v = hybrid_volume(op, cluster)
            rows.append({"scheme": "odc", "sharding": "hybrid", "op": op.value,
                         "intra": str(v.intra), "inter": str(v.inter), "total": str(v.total)})
    return rows


def _run(args) -> int:
    if args.command == "volume":
        _write(emit_report(volume_rows(args.devices, args.per_node, args.shard_elems), args.format), args.output)
        return EXIT_OK
    if args.command == "verify-primitives":
        res = verify_equivalence(args.clients, args.minibatches, args.seed, threaded=args.threaded)
        print(f"passed {res['passed']} failed {res['failed']}")
        return EXIT_OK if res["failed"] == 0 else EXIT_INVARIANT

    cfg = load_config(args)
    if args.command == "simulate":
        _write(emit_report(run_experiment(cfg), cfg.format, REPORT_COLUMNS), args.output)
        if args.trace:
            trace, _ = simulate(build_plan(cfg)[0], cfg.cluster, cfg.cost, cfg.scheme, cfg.sharding,
                                cfg.time_per_cost_unit, cfg.backward_multiplier)
            args.trace.write_text(trace.to_chrome_trace())
    elif args.command == "sweep":
        spec = SweepSpec(args.axis, _parse_values(args.values, args.axis), cfg)
        _write(emit_report(run_sweep(spec, jobs=args.jobs), cfg.format, SWEEP_COLUMNS), args.output)
    elif args.command == "partition":
        steps = build_plan(cfg)
        if args.step is not None:
            if not 0 <= args.step < len(steps):
                raise ConfigError("step", f"must be in [0, {len(steps)})")
            steps = [steps[args.step]]
        _write((json.dumps([s.to_dict() for s in steps], indent=2) + "\n").encode(), args.output)
    return EXIT_OK


def main(argv=None) -> int:
    level = logging.getLevelName(os.environ.get("ODC_SIM_LOG", "WARNING").upper())
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except InfeasibleError as exc:
        print(f"infeasible workload: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ParameterError, FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, ProtocolError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
