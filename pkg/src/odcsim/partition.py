"""Karmarkar-Karp number partitioning and the batching strategies built on it.

All strategies consume the workload in optimizer steps of ``D * minibatch_size``
samples and emit one :class:`BatchingSolution` per step.
"""

from __future__ import annotations

import enum
import heapq
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from odcsim.costmodel import CostModel, MemoryBudget, check_oom, compute_cost, microbatch_cost
from odcsim.errors import InfeasibleError, InvariantViolation, ParameterError, SizeError
from odcsim.workload import Workload

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_ITEMS = 14
_NO_ITEM = float("inf")


class Mode(str, enum.Enum):
    EQUAL_MICRO = "equal-micro"
    VARIABLE_MICRO = "variable-micro"


class Strategy(str, enum.Enum):
    LOCAL_SORT = "local-sort"
    LB_MICRO = "lb-micro"
    LB_MINI = "lb-mini"
    VERL_NATIVE = "verl-native"
    VERL_OPTIMIZED = "verl-optimized"


@dataclass(frozen=True)
class Microbatch:
    sample_ids: tuple[int, ...]
    lengths: tuple[int, ...]
    token_sum: int = field(init=False)

    def __post_init__(self):
        if len(self.sample_ids) != len(self.lengths):
            raise ParameterError("sample_ids and lengths must align")
        object.__setattr__(self, "token_sum", sum(self.lengths))

    @property
    def is_padding(self) -> bool:
        return not self.sample_ids

    def to_dict(self) -> dict:
        return {"sample_ids": list(self.sample_ids), "lengths": list(self.lengths), "token_sum": self.token_sum}


EMPTY_MICROBATCH = Microbatch((), ())


@dataclass(frozen=True)
class BatchingSolution:
    per_device: tuple[tuple[Microbatch, ...], ...]
    mode: Mode
    minibatch_size_per_device: int
    partial: bool = False

    def __post_init__(self):
        object.__setattr__(self, "per_device", tuple(tuple(mbs) for mbs in self.per_device))
        if self.mode == Mode.EQUAL_MICRO and len({len(mbs) for mbs in self.per_device}) > 1:
            raise InvariantViolation("EqualMicro solution with unequal microbatch counts")

    @property
    def devices(self) -> int:
        return len(self.per_device)

    @property
    def num_microbatches(self) -> list[int]:
        return [len(mbs) for mbs in self.per_device]

    @property
    def num_samples(self) -> int:
        return sum(len(mb.sample_ids) for mbs in self.per_device for mb in mbs)

    def sample_lengths(self) -> list[int]:
        return [n for mbs in self.per_device for mb in mbs for n in mb.lengths]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "minibatch_size_per_device": self.minibatch_size_per_device,
            "partial": self.partial,
            "devices": [[list(mb.sample_ids) for mb in mbs] for mbs in self.per_device],
        }


@dataclass(frozen=True)
class PartitionResult:
    parts: tuple[tuple[int, ...], ...]
    sums: tuple
    spread: float

    @classmethod
    def from_parts(cls, parts, costs) -> PartitionResult:
        parts = tuple(tuple(sorted(p)) for p in parts)
        sums = tuple(sum(costs[i] for i in p) for p in parts)
        return cls(parts, sums, max(sums) - min(sums))


# --------------------------------------------------------------------------
# number partitioning


class _State:
    """k part-sums kept sorted by sum descending, as in largest differencing."""

    __slots__ = ("sums", "items", "first")

    def __init__(self, sums, items, first):
        order = sorted(range(len(sums)), key=lambda j: (-sums[j], min(items[j], default=_NO_ITEM)))
        self.sums = [sums[j] for j in order]
        self.items = [items[j] for j in order]
        self.first = first

    @property
    def spread(self):
        return self.sums[0] - self.sums[-1]

    def merge(self, other: _State) -> _State:
        # largest part of one state absorbs the smallest part of the other
        k = len(self.sums)
        sums = [self.sums[j] + other.sums[k - 1 - j] for j in range(k)]
        items = [self.items[j] + other.items[k - 1 - j] for j in range(k)]
        return _State(sums, items, min(self.first, other.first))


def kk_partition(costs: Sequence, k: int, equal_size: bool = False) -> PartitionResult:
    """Split item indices into ``k`` parts with balanced cost sums.

    k-way largest differencing: each item starts as a k-tuple of part sums, and
    the two tuples with the largest spread are merged until one remains. With
    ``equal_size`` the items are sorted and dealt k at a time into singleton
    tuples, so every merge keeps all parts the same size.
    """
    n = len(costs)
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if equal_size and n % k:
        raise ParameterError(f"equal_size requires k | n (n={n}, k={k})")
    if n == 0:
        return PartitionResult(tuple(() for _ in range(k)), tuple(0 for _ in range(k)), 0)

    states = []
    if equal_size:
        order = sorted(range(n), key=lambda i: (costs[i], i))
        for off in range(0, n, k):
            group = order[off:off + k]
            states.append(_State([costs[i] for i in group], [[i] for i in group], min(group)))
    else:
        for i in range(n):
            states.append(_State([costs[i]] + [0] * (k - 1), [[i]] + [[] for _ in range(k - 1)], i))

    heap = [(-s.spread, s.first, idx, s) for idx, s in enumerate(states)]
    heapq.heapify(heap)
    counter = len(states)
    while len(heap) > 1:
        _, _, _, a = heapq.heappop(heap)
        _, _, _, b = heapq.heappop(heap)
        merged = a.merge(b)
        heapq.heappush(heap, (-merged.spread, merged.first, counter, merged))
        counter += 1
    final = heap[0][3]
    if equal_size and len({len(p) for p in final.items}) != 1:
        raise InvariantViolation("size-constrained differencing produced unequal parts")
    return PartitionResult.from_parts(final.items, costs)


def brute_force_partition(costs: Sequence, k: int, equal_size: bool = False) -> PartitionResult:
    """Exhaustive spread-minimal partition (test oracle)."""
    n = len(costs)
    if n > BRUTE_FORCE_MAX_ITEMS:
        raise SizeError(f"brute force limited to {BRUTE_FORCE_MAX_ITEMS} items, got {n}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if equal_size and n % k:
        raise ParameterError(f"equal_size requires k | n (n={n}, k={k})")
    if n == 0 or k == 1:
        return PartitionResult.from_parts([list(range(n))] + [[] for _ in range(k - 1)], costs)

    values = np.asarray(costs, dtype=np.float64)
    # item 0 always goes to part 0 (parts are interchangeable)
    total = k ** (n - 1)
    powers = k ** np.arange(n - 1, dtype=np.int64)
    best_spread, best_code = None, None
    chunk = 1 << 16
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk), dtype=np.int64)
        assign = np.empty((codes.size, n), dtype=np.int8)
        assign[:, 0] = 0
        assign[:, 1:] = (codes[:, None] // powers) % k
        onehot = assign[:, :, None] == np.arange(k, dtype=np.int8)
        sums = np.einsum("cnk,n->ck", onehot.astype(np.float64), values)
        spread = sums.max(axis=1) - sums.min(axis=1)
        if equal_size:
            sizes = onehot.sum(axis=1)
            spread = np.where((sizes == n // k).all(axis=1), spread, np.inf)
        j = int(np.argmin(spread))
        if best_spread is None or spread[j] < best_spread:
            best_spread, best_code = spread[j], int(codes[j])
    digits = [0] + [(best_code // int(p)) % k for p in powers]
    parts = [[i for i in range(n) if digits[i] == p] for p in range(k)]
    return PartitionResult.from_parts(parts, costs)


# --------------------------------------------------------------------------
# minibatch / microbatch partitioning


def minibatch_partition(seqlens: Sequence[int], world_size: int, equal_size: bool, cost: CostModel) -> PartitionResult:
    if world_size < 1:
        raise ParameterError(f"world_size must be >= 1, got {world_size}")
    if equal_size and len(seqlens) < world_size:
        raise ParameterError(f"need at least {world_size} samples for equal-size partition, got {len(seqlens)}")
    return kk_partition([compute_cost(cost, s) for s in seqlens], world_size, equal_size=equal_size)


def _sorted_microbatches(parts, seqlens, ids, cost) -> list[Microbatch]:
    mbs = [Microbatch(tuple(ids[i] for i in p), tuple(seqlens[i] for i in p)) for p in parts]
    # the m-th microbatches of all devices line up heaviest-first
    mbs.sort(key=lambda mb: (-microbatch_cost(cost, mb.lengths), mb.sample_ids[:1] or (float("inf"),)))
    return mbs


def _check_fits(seqlens, ids, budget: MemoryBudget):
    for i, s in enumerate(seqlens):
        if s > budget.max_tokens_per_microbatch:
            raise InfeasibleError(
                f"sample {ids[i]} has {s} tokens, exceeding the microbatch budget "
                f"of {budget.max_tokens_per_microbatch}",
                sample_id=ids[i],
            )


def _fits(result: PartitionResult, seqlens, budget) -> bool:
    return not any(check_oom([seqlens[i] for i in p], budget) for p in result.parts)


def minimal_microbatch_count(seqlens: Sequence[int], budget: MemoryBudget, cost: CostModel) -> int:
    """Smallest k for which differencing into k parts is memory-feasible."""
    if not seqlens:
        return 0
    costs = [compute_cost(cost, s) for s in seqlens]
    k = 1
    while not _fits(kk_partition(costs, k), seqlens, budget):
        k += 1
        if k > len(seqlens):
            raise InvariantViolation("microbatch loop did not terminate at one sample per part")
    return k


def microbatch_partition(
    seqlens: Sequence[int],
    budget: MemoryBudget,
    cost: CostModel,
    same_micro_in_dp: bool = False,
    peer_seqlens: Sequence[Sequence[int]] = (),
    sample_ids: Sequence[int] | None = None,
) -> list[Microbatch]:
    """Pack one device's minibatch into the fewest memory-feasible microbatches.

    With ``same_micro_in_dp`` the count is agreed with the peers listed in
    ``peer_seqlens`` (the all-reduce of the OOM flag), and this device
    re-partitions at the agreed count.
    """
    ids = list(range(len(seqlens))) if sample_ids is None else list(sample_ids)
    _check_fits(seqlens, ids, budget)
    if same_micro_in_dp:
        groups = [list(seqlens)] + [list(p) for p in peer_seqlens]
        return joint_microbatch_partition(groups, budget, cost, [ids] + [None] * len(peer_seqlens))[0]
    k = minimal_microbatch_count(seqlens, budget, cost)
    if k == 0:
        return []
    result = kk_partition([compute_cost(cost, s) for s in seqlens], k)
    return _sorted_microbatches(result.parts, seqlens, ids, cost)


def joint_microbatch_partition(
    groups: Sequence[Sequence[int]],
    budget: MemoryBudget,
    cost: CostModel,
    group_ids: Sequence[Sequence[int] | None] | None = None,
) -> list[list[Microbatch]]:
    """Joint loop with an all-reduced OOM flag: every device uses the same microbatch count.

    Below the largest per-device minimum some device is always OOM, so the
    joint loop starts there and only advances while some device still fails.
    """
    if group_ids is None:
        group_ids = [None] * len(groups)
    ids = [list(range(len(g))) if gi is None else list(gi) for g, gi in zip(groups, group_ids)]
    for g, gi in zip(groups, ids):
        _check_fits(g, gi, budget)
    k = max([minimal_microbatch_count(g, budget, cost) for g in groups] + [1])
    costs = [[compute_cost(cost, s) for s in g] for g in groups]
    while True:
        results = [kk_partition(c, k) for c in costs]
        if all(_fits(r, g, budget) for r, g in zip(results, groups)):
            break
        k += 1
    out = []
    for r, g, gi in zip(results, groups, ids):
        mbs = _sorted_microbatches([p for p in r.parts if p], g, gi, cost)
        mbs += [EMPTY_MICROBATCH] * (k - len(mbs))
        out.append(mbs)
    return out


# --------------------------------------------------------------------------
# strategies


def _pad_equal(per_device: list[list[Microbatch]]) -> list[list[Microbatch]]:
    m = max((len(mbs) for mbs in per_device), default=0)
    return [mbs + [EMPTY_MICROBATCH] * (m - len(mbs)) for mbs in per_device]


def _local_sort_step(lengths, ids, D) -> list[list[Microbatch]]:
    order = sorted(range(len(lengths)), key=lambda i: (-lengths[i], ids[i]))
    per_device = [[] for _ in range(D)]
    for rank, i in enumerate(order):
        per_device[rank % D].append(Microbatch((ids[i],), (lengths[i],)))
    return _pad_equal(per_device)


def _balanced_step(lengths, ids, D, budget, cost, equal_size, joint) -> list[list[Microbatch]]:
    if equal_size and len(lengths) % D:
        equal_size = False
    ranks = minibatch_partition(lengths, D, equal_size, cost).parts
    groups = [[lengths[i] for i in p] for p in ranks]
    group_ids = [[ids[i] for i in p] for p in ranks]
    if joint:
        return joint_microbatch_partition(groups, budget, cost, group_ids)
    return [microbatch_partition(g, budget, cost, sample_ids=gi) for g, gi in zip(groups, group_ids)]


def plan(
    strategy: Strategy | str,
    w: Workload,
    D: int,
    minibatch_size: int,
    budget: MemoryBudget,
    cost: CostModel,
    seed: int = 0,
    pool_minibatches: int = 4,
) -> list[BatchingSolution]:
    """Schedule the whole workload, one :class:`BatchingSolution` per optimizer step.

    ``pool_minibatches`` sets the global batch of the two verl strategies, which
    balance (native) or shuffle (optimized) a pool of that many steps at once.
    """
    strategy = Strategy(strategy)
    if D < 1 or minibatch_size < 1 or pool_minibatches < 1:
        raise ParameterError("D, minibatch_size and pool_minibatches must be >= 1")
    lengths = w.lengths
    ids = [s.id for s in w.samples]
    _check_fits(lengths, ids, budget)
    step = D * minibatch_size
    rng = np.random.default_rng(seed)
    mode = Mode.VARIABLE_MICRO if strategy == Strategy.LB_MINI else Mode.EQUAL_MICRO

    def solution(per_device, n_samples):
        return BatchingSolution(per_device, mode, minibatch_size, partial=n_samples < step)

    steps: list[BatchingSolution] = []
    if strategy in (Strategy.LOCAL_SORT, Strategy.LB_MICRO, Strategy.LB_MINI):
        for off in range(0, len(lengths), step):
            ls, gi = lengths[off:off + step], ids[off:off + step]
            if len(ls) < step:
                logger.warning("trailing partial step with %d of %d samples", len(ls), step)
            if strategy == Strategy.LOCAL_SORT:
                per_device = _local_sort_step(ls, gi, D)
            elif strategy == Strategy.LB_MICRO:
                per_device = _balanced_step(ls, gi, D, budget, cost, equal_size=True, joint=True)
            else:
                per_device = _balanced_step(ls, gi, D, budget, cost, equal_size=False, joint=False)
            steps.append(solution(per_device, len(ls)))
        return steps

    pool = pool_minibatches * step
    for off in range(0, len(lengths), pool):
        ls, gi = lengths[off:off + pool], ids[off:off + pool]
        if strategy == Strategy.VERL_NATIVE:
            usable = len(ls) - len(ls) % D
            if usable < len(ls):
                logger.warning("dropping %d trailing samples not divisible by %d ranks", len(ls) - usable, D)
                ls, gi = ls[:usable], gi[:usable]
            if not ls:
                continue
            # balance the whole pool across ranks, then shuffle and split locally
            rank_parts = minibatch_partition(ls, D, True, cost).parts
            rank_pools = []
            for p in rank_parts:
                p = list(p)
                rng.shuffle(p)
                rank_pools.append(p)
            per_rank = len(rank_pools[0])
            for moff in range(0, per_rank, minibatch_size):
                members = [rp[moff:moff + minibatch_size] for rp in rank_pools]
                groups = [[ls[i] for i in m] for m in members]
                group_ids = [[gi[i] for i in m] for m in members]
                per_device = joint_microbatch_partition(groups, budget, cost, group_ids)
                steps.append(solution(per_device, sum(len(m) for m in members)))
        else:
            order = rng.permutation(len(ls))
            ls, gi = [ls[i] for i in order], [gi[i] for i in order]
            for moff in range(0, len(ls), step):
                mls, mgi = ls[moff:moff + step], gi[moff:moff + step]
                per_device = _balanced_step(mls, mgi, D, budget, cost, equal_size=True, joint=True)
                steps.append(solution(per_device, len(mls)))
    return steps

