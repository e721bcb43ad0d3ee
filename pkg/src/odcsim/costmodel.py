"""Per-layer compute cost and memory feasibility of packed microbatches.

Costs are ``alpha * s**2 + beta * s`` per sample of ``s`` tokens. Packed samples
are masked from each other, so the costs of a microbatch add. Memory scales
linearly with tokens, so the token sum is checked against a budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from odcsim.errors import ParameterError

EMPTY_MICROBATCH_COST = 0


@dataclass(frozen=True)
class CostModel:
    alpha: float = 1
    beta: float = 0
    layers: int = 1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ParameterError(f"need alpha, beta >= 0 and alpha + beta > 0 (got {self.alpha}, {self.beta})")
        if self.layers < 1:
            raise ParameterError(f"layers must be >= 1, got {self.layers}")

    def scaled(self, factor: float) -> CostModel:
        return CostModel(self.alpha * factor, self.beta * factor, self.layers)


@dataclass(frozen=True)
class MemoryBudget:
    max_tokens_per_microbatch: int

    def __post_init__(self):
        if self.max_tokens_per_microbatch < 1:
            raise ParameterError("max_tokens_per_microbatch must be >= 1")


def compute_cost(model: CostModel, s: int):
    if s < 1:
        raise ParameterError(f"sequence length must be >= 1, got {s}")
    return model.alpha * s * s + model.beta * s


def microbatch_cost(model: CostModel, lengths: Sequence[int]):
    """Per-layer cost of a packed microbatch; the empty padding microbatch costs 0."""
    if not lengths:
        return EMPTY_MICROBATCH_COST
    return sum(compute_cost(model, s) for s in lengths)


def token_budget(max_len: int, packing_ratio) -> int:
    if max_len < 1:
        raise ParameterError(f"max_len must be >= 1, got {max_len}")
    r = packing_ratio if isinstance(packing_ratio, Fraction) else Fraction(str(packing_ratio))
    if r < 1:
        # a single max-length sample has to fit in one microbatch
        raise ParameterError(f"packing_ratio must be >= 1, got {packing_ratio}")
    return math.floor(max_len * r)


def check_oom(lengths: Sequence[int], budget: MemoryBudget | int) -> bool:
    limit = budget.max_tokens_per_microbatch if isinstance(budget, MemoryBudget) else budget
    return sum(lengths) > limit
