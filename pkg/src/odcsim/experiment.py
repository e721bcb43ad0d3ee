"""Experiment orchestration: plan, evaluate, simulate, and report."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from odcsim.commsim import Op, Sharding, comm_volume, hybrid_volume, simulate, simulate_plan
from odcsim.config import ExperimentConfig, SweepSpec
from odcsim.costmodel import MemoryBudget, token_budget
from odcsim.partition import BatchingSolution, Strategy, plan
from odcsim.runtime import Scheme, combine, evaluate_plan, runtime
from odcsim.workload import Workload, generate_synthetic, load_lengths, scale_lengths

# analytic times are in cost units, sim_* in seconds; volumes are elements sent
# by the busiest device over the step (gather + reduce, plus hybrid step sync)
REPORT_COLUMNS = (
    "strategy", "scheme", "minibatch_size", "step", "samples", "microbatches",
    "total_time", "bubble_rate", "samples_per_time",
    "sim_total_time", "sim_bubble_rate", "exposed_comm",
    "intra_volume", "inter_volume", "sharding", "devices",
)
SWEEP_COLUMNS = (
    "axis", "value", "collective_time", "odc_time", "acceleration_ratio", "analytic_ratio",
    "collective_bubble", "odc_bubble",
)


def build_workload(cfg: ExperimentConfig) -> Workload:
    if cfg.lengths_file is not None:
        w = load_lengths(Path(cfg.lengths_file).read_bytes())
    else:
        w = generate_synthetic(cfg.workload, cfg.num_samples, cfg.max_length_cap, cfg.seed)
    if cfg.max_length_ratio != 1:
        w = scale_lengths(w, cfg.max_length_ratio)
    return w


def build_plan(cfg: ExperimentConfig, w: Workload | None = None, strategy: str | None = None) -> list[BatchingSolution]:
    w = build_workload(cfg) if w is None else w
    budget = MemoryBudget(token_budget(w.max_length, cfg.packing_ratio))
    return plan(strategy or cfg.strategy, w, cfg.devices, cfg.minibatch_size, budget, cfg.cost,
                seed=cfg.seed, pool_minibatches=cfg.pool_minibatches)


def _step_volume(cfg: ExperimentConfig, sol: BatchingSolution) -> tuple:
    cl = cfg.cluster
    if Sharding(cfg.sharding) == Sharding.HYBRID:
        g, r = hybrid_volume(Op.PARAM_GATHER, cl), hybrid_volume(Op.GRAD_REDUCE, cl)
    else:
        g, r = comm_volume(cfg.scheme, Op.PARAM_GATHER, cl), comm_volume(cfg.scheme, Op.GRAD_REDUCE, cl)
    if Scheme(cfg.scheme) == Scheme.COLLECTIVE:
        passes = max(sol.num_microbatches)
    else:
        passes = max(sum(not mb.is_padding for mb in dev) for dev in sol.per_device)
    intra = cl.layers * passes * (g.intra + r.intra)
    inter = cl.layers * passes * (g.inter + r.inter)
    if Sharding(cfg.sharding) == Sharding.HYBRID:
        inter += cl.layers * cl.shard_elems * (cl.devices - cl.per_node) / cl.per_node
    return float(intra), float(inter)


def _row(cfg, step, samples, micro, analytic, sim, exposed, intra, inter) -> dict:
    return {
        "strategy": cfg.strategy,
        "scheme": cfg.scheme,
        "minibatch_size": cfg.minibatch_size,
        "step": step,
        "samples": samples,
        "microbatches": micro,
        "total_time": analytic.total_time,
        "bubble_rate": analytic.bubble_rate,
        "samples_per_time": analytic.samples_per_time,
        "sim_total_time": sim.total_time,
        "sim_bubble_rate": sim.bubble_rate,
        "exposed_comm": exposed,
        "intra_volume": intra,
        "inter_volume": inter,
        "sharding": cfg.sharding,
        "devices": cfg.devices,
    }


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """One row per optimizer step followed by an aggregate row with ``step == "all"``."""
    steps = build_plan(cfg)
    rows, analytic, simulated = [], [], []
    tot_intra = tot_inter = tot_exposed = 0.0
    for i, sol in enumerate(steps):
        a = runtime(sol, cfg.cost, cfg.scheme)
        trace, s = simulate(sol, cfg.cluster, cfg.cost, cfg.scheme, cfg.sharding,
                            cfg.time_per_cost_unit, cfg.backward_multiplier, record=False)
        exposed = max(trace.exposed_comm_time, default=0.0)
        intra, inter = _step_volume(cfg, sol)
        rows.append(_row(cfg, i, sol.num_samples, max(sol.num_microbatches), a, s, exposed, intra, inter))
        analytic.append(a)
        simulated.append(s)
        tot_intra += intra
        tot_inter += inter
        tot_exposed += exposed
    micro = sum(r["microbatches"] for r in rows)
    rows.append(_row(cfg, "all", sum(r.samples for r in analytic), micro,
                     combine(analytic), combine(simulated), tot_exposed, tot_intra, tot_inter))
    return rows


def _sweep_point(args) -> dict:
    axis, value, cfg = args
    steps = build_plan(cfg, strategy=Strategy.LB_MICRO.value)
    sim = {}
    for scheme in (Scheme.COLLECTIVE, Scheme.ODC):
        sim[scheme], _ = simulate_plan(steps, cfg.cluster, cfg.cost, scheme, cfg.sharding,
                                       cfg.time_per_cost_unit, cfg.backward_multiplier)
    coll_a = evaluate_plan(steps, cfg.cost, Scheme.COLLECTIVE)
    odc_a = evaluate_plan(steps, cfg.cost, Scheme.ODC)
    return {
        "axis": axis,
        "value": value,
        "collective_time": sim[Scheme.COLLECTIVE].total_time,
        "odc_time": sim[Scheme.ODC].total_time,
        "acceleration_ratio": sim[Scheme.COLLECTIVE].total_time / sim[Scheme.ODC].total_time,
        "analytic_ratio": coll_a.total_time / odc_a.total_time,
        "collective_bubble": sim[Scheme.COLLECTIVE].bubble_rate,
        "odc_bubble": sim[Scheme.ODC].bubble_rate,
    }


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[dict]:
    """Collective LB-Micro against ODC LB-Micro on the same plan, one row per axis value.

    The base config's strategy and scheme are ignored; the ratio comes from the
    communication-aware simulation, the analytic compute-only ratio rides along.
    """
    tasks = [(spec.axis, v, spec.point(v)) for v in spec.values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def _fmt(v, fmt: str) -> str:
    if isinstance(v, float):
        return f"{v:.6g}" if fmt == "md" else repr(v)
    return str(v)


def emit_report(rows: Sequence[dict], fmt: str = "json", columns: Sequence[str] | None = None) -> bytes:
    if columns is None:
        columns = tuple(rows[0]) if rows else REPORT_COLUMNS
    if fmt == "json":
        return (json.dumps([{c: r[c] for c in columns} for r in rows], indent=2) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r[c], fmt) for c in columns])
        return buf.getvalue().encode()
    if fmt in ("md", "markdown"):
        lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
        lines += ["| " + " | ".join(_fmt(r[c], "md") for c in columns) + " |" for r in rows]
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown format {fmt!r}")
