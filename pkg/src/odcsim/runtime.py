"""Compute-only runtime of batching solutions under the two synchronization schemes.

Layers are homogeneous, so the per-layer cost of a microbatch is its packed
cost and a minibatch costs ``L`` times that. Collectives align every device at
every layer; on-demand communication aligns them once, at minibatch end.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from odcsim.costmodel import CostModel, microbatch_cost
from odcsim.errors import DegenerateInputError, ModeError, ParameterError
from odcsim.partition import BatchingSolution, Mode


class Scheme(str, enum.Enum):
    COLLECTIVE = "collective"
    ODC = "odc"


@dataclass(frozen=True)
class RuntimeReport:
    scheme: Scheme
    total_time: float
    per_device_busy: tuple
    bubble_rate: float
    samples_per_time: float
    steps: int = 1
    samples: int = 0

    @property
    def devices(self) -> int:
        return len(self.per_device_busy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        d["per_device_busy"] = list(self.per_device_busy)
        return d


def _bubble(total, busy) -> float:
    if total <= 0:
        raise DegenerateInputError("bubble rate undefined for zero total time")
    return 1 - sum(busy) / (len(busy) * total)


def make_report(scheme: Scheme, total, busy: Sequence, samples: int, steps: int = 1) -> RuntimeReport:
    return RuntimeReport(
        scheme=Scheme(scheme),
        total_time=total,
        per_device_busy=tuple(busy),
        bubble_rate=_bubble(total, busy),
        samples_per_time=samples / total,
        steps=steps,
        samples=samples,
    )


def device_costs(sol: BatchingSolution, cost: CostModel) -> list[list]:
    """Per-layer cost of every microbatch, indexed ``[device][microbatch]``."""
    return [[microbatch_cost(cost, mb.lengths) for mb in mbs] for mbs in sol.per_device]


def runtime_collective(sol: BatchingSolution, cost: CostModel) -> RuntimeReport:
    if sol.mode != Mode.EQUAL_MICRO:
        raise ModeError("collective synchronization needs equal microbatch counts; LB-Mini runs only with ODC")
    costs = device_costs(sol, cost)
    n_micro = len(costs[0]) if costs else 0
    total = cost.layers * sum(max(dev[m] for dev in costs) for m in range(n_micro))
    busy = [cost.layers * sum(dev) for dev in costs]
    return make_report(Scheme.COLLECTIVE, total, busy, sol.num_samples)


def runtime_odc(sol: BatchingSolution, cost: CostModel) -> RuntimeReport:
    busy = [cost.layers * sum(dev) for dev in device_costs(sol, cost)]
    return make_report(Scheme.ODC, max(busy), busy, sol.num_samples)


def runtime(sol: BatchingSolution, cost: CostModel, scheme: Scheme | str) -> RuntimeReport:
    if Scheme(scheme) == Scheme.COLLECTIVE:
        return runtime_collective(sol, cost)
    return runtime_odc(sol, cost)


def combine(reports: Iterable[RuntimeReport]) -> RuntimeReport:
    """Aggregate consecutive optimizer steps into one report."""
    reports = list(reports)
    if not reports:
        raise ParameterError("nothing to combine")
    if len({r.scheme for r in reports}) != 1 or len({r.devices for r in reports}) != 1:
        raise ParameterError("reports must share scheme and device count")
    total = sum(r.total_time for r in reports)
    busy = [sum(col) for col in zip(*(r.per_device_busy for r in reports))]
    samples = sum(r.samples for r in reports)
    return make_report(reports[0].scheme, total, busy, samples, steps=sum(r.steps for r in reports))


def evaluate_plan(steps: Sequence[BatchingSolution], cost: CostModel, scheme: Scheme | str) -> RuntimeReport:
    return combine(runtime(sol, cost, scheme) for sol in steps)


def bubble_rate(report: RuntimeReport) -> float:
    return _bubble(report.total_time, report.per_device_busy)


def acceleration_ratio(coll: RuntimeReport, odc: RuntimeReport) -> float:
    return coll.total_time / odc.total_time
