"""Communication volume, timing, and an event-level simulation of one optimizer step.

Every microbatch runs ``L`` forward and ``L`` backward layer slots. Each slot
needs the layer's parameters (one gather), and each backward slot emits one
gradient reduction. Parameters for a slot are prefetched while the previous
slot computes. Collectives additionally align all devices at every slot;
on-demand communication lets each device run ahead and aligns only at the end.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction

from odcsim.costmodel import CostModel
from odcsim.errors import ModeError, ParameterError
from odcsim.partition import BatchingSolution, Mode
from odcsim.runtime import RuntimeReport, Scheme, combine, device_costs, make_report


class Op(str, enum.Enum):
    PARAM_GATHER = "param-gather"
    GRAD_REDUCE = "grad-reduce"


class Sharding(str, enum.Enum):
    FULL = "full"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class ClusterSpec:
    """Defaults: one 8-GPU node, a 1.5B-parameter 28-layer model in bf16.

    Bandwidths are bytes per time unit, ``shard_elems`` is one device's shard
    of one layer.
    """

    devices: int = 8
    per_node: int = 8
    shard_elems: float = 3_538_944
    elem_bytes: int = 2
    intra_bw: float = 300e9
    inter_bw: float = 12.5e9
    layers: int = 28

    def __post_init__(self):
        if self.devices < 1 or self.per_node < 1:
            raise ParameterError("devices and per_node must be >= 1")
        if self.devices % self.per_node:
            raise ParameterError(f"per_node ({self.per_node}) must divide devices ({self.devices})")
        if self.intra_bw <= 0 or self.inter_bw <= 0:
            raise ParameterError("bandwidths must be > 0")
        if self.shard_elems < 1:
            raise ParameterError("shard_elems must be >= 1")
        if self.layers < 1:
            raise ParameterError("layers must be >= 1")

    @property
    def nodes(self) -> int:
        return self.devices // self.per_node


@dataclass(frozen=True)
class VolumeReport:
    intra: object
    inter: object

    @property
    def total(self):
        return self.intra + self.inter

    def to_dict(self) -> dict:
        return {"intra": self.intra, "inter": self.inter, "total": self.total}


def _exact(x):
    return x if isinstance(x, float) else Fraction(x)


def comm_volume(scheme: Scheme | str, op: Op | str, cluster: ClusterSpec) -> VolumeReport:
    """Per-client elements sent for one layer; gather and reduce cost the same.

    Ints and Fractions stay exact. On a single node the ring's inter-node share
    has nowhere to go but intra.
    """
    Op(op)
    D, G, K = cluster.devices, cluster.per_node, _exact(cluster.shard_elems)
    if D == G:
        return VolumeReport((D - 1) * K, 0 * K)
    if Scheme(scheme) == Scheme.COLLECTIVE:
        return VolumeReport(Fraction(G - 1, G) * (D - 1) * K, Fraction(1, G) * (D - 1) * K)
    return VolumeReport((G - 1) * K, (D - G) * K)


def hybrid_volume(op: Op | str, cluster: ClusterSpec) -> VolumeReport:
    """Parameters and gradients sharded inside a node only; no per-layer inter-node traffic."""
    Op(op)
    D, G, K = cluster.devices, cluster.per_node, _exact(cluster.shard_elems)
    if D == G:
        raise ParameterError("hybrid sharding needs more than one node (devices == per_node)")
    return VolumeReport((G - 1) * (K * D / G), 0 * K)


def comm_time(vol: VolumeReport, cluster: ClusterSpec, scheme: Scheme | str) -> float:
    """Hierarchical rings pipeline their tiers; a point-to-point client serializes them."""
    intra = float(vol.intra) * cluster.elem_bytes / cluster.intra_bw
    inter = float(vol.inter) * cluster.elem_bytes / cluster.inter_bw
    if Scheme(scheme) == Scheme.COLLECTIVE:
        return max(intra, inter)
    return intra + inter


def hybrid_step_sync_time(cluster: ClusterSpec) -> float:
    """Once-per-step cross-node reduction of the node-local gradient shards.

    Optimizer states stay sharded across nodes, so each device ring-reduces its
    ``K*D/G`` gradient shard over the ``D/G`` nodes for every layer.
    """
    if cluster.nodes == 1:
        return 0.0
    elems = cluster.shard_elems * (cluster.devices - cluster.per_node) / cluster.per_node
    return cluster.layers * elems * cluster.elem_bytes / cluster.inter_bw


def buffer_requirement(layer_elems: int, devices: int) -> dict:
    if layer_elems < 1 or devices < 1:
        raise ParameterError("layer_elems and devices must be >= 1")
    per_client = -(-layer_elems // devices)
    return {"per_client": per_client, "per_server_total": per_client * devices}


# --------------------------------------------------------------------------
# simulation

_KIND_ORDER = {"compute": 0, "param-gather": 1, "grad-reduce": 2, "step-sync": 3}


@dataclass
class SimTrace:
    events: list[list[dict]] = field(default_factory=list)
    total_time: float = 0.0
    exposed_comm_time: list[float] = field(default_factory=list)

    def sorted_events(self) -> list[dict]:
        """All events ordered by (start, device, kind)."""
        keyed = [
            (ev["start"], d, _KIND_ORDER[ev["kind"]], i, ev)
            for d, evs in enumerate(self.events)
            for i, ev in enumerate(evs)
        ]
        return [dict(ev, device=d) for _, d, _, _, ev in sorted(keyed, key=lambda k: k[:4])]

    def to_json(self) -> str:
        return json.dumps(
            {"total_time": self.total_time, "exposed_comm_time": self.exposed_comm_time, "events": self.events},
            sort_keys=True,
        )

    def to_chrome_trace(self, time_scale: float = 1e6) -> str:
        """Chrome trace-event JSON; one process per device, compute and comm as threads."""
        tids = {"compute": 0, "param-gather": 1, "grad-reduce": 2, "step-sync": 3}
        out = []
        for d, evs in enumerate(self.events):
            for ev in evs:
                args = {k: v for k, v in ev.items() if k not in ("start", "end", "kind")}
                out.append({
                    "name": ev["kind"] if ev["kind"] != "compute" else f"{ev['phase']} L{ev['layer']} mb{ev['microbatch']}",
                    "cat": ev["kind"],
                    "ph": "X",
                    "ts": ev["start"] * time_scale,
                    "dur": (ev["end"] - ev["start"]) * time_scale,
                    "pid": d,
                    "tid": tids[ev["kind"]],
                    "args": args,
                })
        return json.dumps({"traceEvents": out, "displayTimeUnit": "ms"}, sort_keys=True)


@dataclass(frozen=True)
class OpTimes:
    gather: float
    reduce: float
    gather_volume: VolumeReport
    reduce_volume: VolumeReport
    step_sync: float = 0.0


def op_times(cluster: ClusterSpec, scheme: Scheme | str, sharding: Sharding | str) -> OpTimes:
    if Sharding(sharding) == Sharding.HYBRID:
        g, r = hybrid_volume(Op.PARAM_GATHER, cluster), hybrid_volume(Op.GRAD_REDUCE, cluster)
        sync = hybrid_step_sync_time(cluster)
    else:
        g, r = comm_volume(scheme, Op.PARAM_GATHER, cluster), comm_volume(scheme, Op.GRAD_REDUCE, cluster)
        sync = 0.0
    return OpTimes(comm_time(g, cluster, scheme), comm_time(r, cluster, scheme), g, r, sync)


def _slots(per_layer_costs, layers, fwd_share):
    """Flatten microbatches into (microbatch, phase, layer, compute) slots."""
    out = []
    for m, c in enumerate(per_layer_costs):
        fwd = c * fwd_share
        bwd = c - fwd
        out.extend((m, "forward", l, fwd) for l in range(layers))
        out.extend((m, "backward", l, bwd) for l in reversed(range(layers)))
    return out


def simulate(
    sol: BatchingSolution,
    cluster: ClusterSpec,
    cost: CostModel,
    scheme: Scheme | str,
    sharding: Sharding | str = Sharding.FULL,
    time_per_cost_unit: float = 1.0,
    backward_multiplier: float = 1.0,
    record: bool = True,
) -> tuple[SimTrace, RuntimeReport]:
    """Simulate one optimizer step; returns the trace and a time-based report.

    A layer's cost is split between its forward and backward slot in the ratio
    ``1 : backward_multiplier``, so zero-cost communication reproduces the
    compute-only runtime.
    """
    scheme, sharding = Scheme(scheme), Sharding(sharding)
    if scheme == Scheme.COLLECTIVE and sol.mode != Mode.EQUAL_MICRO:
        raise ModeError("collective synchronization needs equal microbatch counts; LB-Mini runs only with ODC")
    if sol.devices != cluster.devices:
        raise ParameterError(f"solution has {sol.devices} devices, cluster has {cluster.devices}")
    if cluster.layers != cost.layers:
        raise ParameterError(f"cluster.layers ({cluster.layers}) != cost.layers ({cost.layers})")
    times = op_times(cluster, scheme, sharding)
    L = cost.layers
    fwd_share = 1 / (1 + backward_multiplier)
    costs = [[c * time_per_cost_unit for c in dev] for dev in device_costs(sol, cost)]
    if scheme == Scheme.COLLECTIVE:
        trace = _simulate_collective(costs, L, fwd_share, times, record)
    else:
        trace = _simulate_odc(costs, sol, L, fwd_share, times, record)
    busy = [L * sum(dev) for dev in costs]
    return trace, make_report(scheme, trace.total_time, busy, sol.num_samples)


def _simulate_collective(costs, L, fwd_share, t: OpTimes, record) -> SimTrace:
    D = len(costs)
    per_dev_slots = [_slots(dev, L, fwd_share) for dev in costs]
    n = len(per_dev_slots[0]) if D else 0
    events = [[] for _ in range(D)]
    exposed = [0.0] * D
    barrier = 0.0       # every device done with the previous slot
    prev_start = 0.0    # issue time of the next prefetch
    gather_end = 0.0
    reduce_end = 0.0
    for j in range(n):
        # collective starts once every device has issued it and the stream is free
        g_start = max(prev_start, gather_end)
        gather_end = g_start + t.gather
        start = max(barrier, gather_end)
        stall = start - barrier
        slot_max = 0.0
        for d in range(D):
            m, phase, layer, c = per_dev_slots[d][j]
            exposed[d] += stall
            slot_max = max(slot_max, c)
            if record:
                events[d].append({"kind": "param-gather", "start": g_start, "end": gather_end, "layer": layer,
                                  "microbatch": m, "volume": float(t.gather_volume.total)})
                events[d].append({"kind": "compute", "start": start, "end": start + c, "phase": phase,
                                  "layer": layer, "microbatch": m})
        prev_start = start
        barrier = start + slot_max
        if per_dev_slots[0][j][1] == "backward":
            r_start = max(barrier, reduce_end)
            reduce_end = r_start + t.reduce
            if record:
                for d in range(D):
                    m, _, layer, _ = per_dev_slots[d][j]
                    events[d].append({"kind": "grad-reduce", "start": r_start, "end": reduce_end, "layer": layer,
                                      "microbatch": m, "volume": float(t.reduce_volume.total)})
    end = max(barrier, reduce_end)
    for d in range(D):
        exposed[d] += end - barrier
    end = _step_sync(events, exposed, end, t, record)
    return SimTrace(events if record else [[] for _ in range(D)], end, exposed)


def _simulate_odc(costs, sol, L, fwd_share, t: OpTimes, record) -> SimTrace:
    D = len(costs)
    events = [[] for _ in range(D)]
    exposed = [0.0] * D
    finish = [0.0] * D
    for d, (dev, mbs) in enumerate(zip(costs, sol.per_device)):
        # padding microbatches carry no work and no traffic without collectives
        real = [c for c, mb in zip(dev, mbs) if not mb.is_padding]
        slots = _slots(real, L, fwd_share)
        end = prev_start = gather_end = reduce_end = 0.0
        for m, phase, layer, c in slots:
            g_start = max(prev_start, gather_end)
            gather_end = g_start + t.gather
            start = max(end, gather_end)
            exposed[d] += start - end
            if record:
                events[d].append({"kind": "param-gather", "start": g_start, "end": gather_end, "layer": layer,
                                  "microbatch": m, "volume": float(t.gather_volume.total)})
                events[d].append({"kind": "compute", "start": start, "end": start + c, "phase": phase,
                                  "layer": layer, "microbatch": m})
            prev_start, end = start, start + c
            if phase == "backward":
                r_start = max(end, reduce_end)
                reduce_end = r_start + t.reduce
                if record:
                    events[d].append({"kind": "grad-reduce", "start": r_start, "end": reduce_end, "layer": layer,
                                      "microbatch": m, "volume": float(t.reduce_volume.total)})
        # in-flight scatter-accumulates must land before the minibatch barrier
        exposed[d] += max(0.0, reduce_end - end)
        finish[d] = max(end, reduce_end)
    total = max(finish, default=0.0)
    total = _step_sync(events, exposed, total, t, record)
    return SimTrace(events if record else [[] for _ in range(D)], total, exposed)


def _step_sync(events, exposed, end, t: OpTimes, record) -> float:
    if not t.step_sync:
        return end
    for d in range(len(exposed)):
        exposed[d] += t.step_sync
        if record:
            events[d].append({"kind": "step-sync", "start": end, "end": end + t.step_sync})
    return end + t.step_sync


def simulate_plan(steps, cluster, cost, scheme, sharding=Sharding.FULL, time_per_cost_unit=1.0,
                  backward_multiplier=1.0) -> tuple[RuntimeReport, list[float]]:
    """Run every step back to back; returns the combined report and per-step exposed comm."""
    reports, exposed = [], []
    for sol in steps:
        trace, rep = simulate(sol, cluster, cost, scheme, sharding, time_per_cost_unit, backward_multiplier,
                              record=False)
        reports.append(rep)
        exposed.append(max(trace.exposed_comm_time, default=0.0))
    return combine(reports), exposed

