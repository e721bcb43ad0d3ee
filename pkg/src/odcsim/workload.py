"""Sequence-length workloads: synthetic generation, file ingestion, scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from odcsim.errors import FormatError, ParameterError

DISTRIBUTIONS = {
    "lognormal": ("mu", "sigma"),
    "pareto": ("scale", "shape"),
    "uniform": ("lo", "hi"),
}


@dataclass(frozen=True)
class Sample:
    id: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ParameterError(f"sample {self.id}: length must be >= 1, got {self.length}")


@dataclass(frozen=True)
class Workload:
    samples: tuple[Sample, ...]
    max_length: int = field(init=False)

    def __post_init__(self):
        if not self.samples:
            raise ParameterError("workload must contain at least one sample")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ParameterError("sample ids must be unique within a workload")
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "max_length", max(s.length for s in self.samples))

    @classmethod
    def from_lengths(cls, lengths: Iterable[int]) -> Workload:
        return cls(tuple(Sample(i, int(n)) for i, n in enumerate(lengths)))

    @property
    def lengths(self) -> list[int]:
        return [s.length for s in self.samples]

    def __len__(self) -> int:
        return len(self.samples)

    def length_of(self) -> dict[int, int]:
        return {s.id: s.length for s in self.samples}


@dataclass(frozen=True)
class DistributionSpec:
    """A parsed ``name:key=value,...`` distribution string."""

    name: str
    params: tuple[tuple[str, float], ...]

    @classmethod
    def parse(cls, text: str) -> DistributionSpec:
        name, _, rest = text.partition(":")
        name = name.strip().lower()
        if name not in DISTRIBUTIONS:
            raise ParameterError(f"unknown distribution {name!r}; expected one of {sorted(DISTRIBUTIONS)}")
        params = {}
        for item in filter(None, (p.strip() for p in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ParameterError(f"malformed distribution parameter {item!r}")
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise ParameterError(f"non-numeric value for {key.strip()!r}: {value!r}") from None
        expected = DISTRIBUTIONS[name]
        if set(params) != set(expected):
            raise ParameterError(f"{name} expects parameters {expected}, got {tuple(params)}")
        return cls(name, tuple((k, params[k]) for k in expected))

    def __getitem__(self, key: str) -> float:
        return dict(self.params)[key]

    def __str__(self) -> str:
        return self.name + ":" + ",".join(f"{k}={v:g}" for k, v in self.params)


def _round_half_up(x) -> int:
    return math.floor(x + Fraction(1, 2)) if isinstance(x, Fraction) else math.floor(x + 0.5)


def generate_synthetic(dist: DistributionSpec | str, n: int, cap: int, seed: int) -> Workload:
    """Draw ``n`` integer lengths from ``dist``, clamped to ``[1, cap]``."""
    if isinstance(dist, str):
        dist = DistributionSpec.parse(dist)
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if cap < 1:
        raise ParameterError(f"cap must be >= 1, got {cap}")
    rng = np.random.default_rng(seed)
    if dist.name == "lognormal":
        if dist["sigma"] <= 0:
            raise ParameterError("lognormal sigma must be > 0")
        raw = rng.lognormal(dist["mu"], dist["sigma"], size=n)
    elif dist.name == "pareto":
        if dist["scale"] <= 0 or dist["shape"] <= 0:
            raise ParameterError("pareto scale and shape must be > 0")
        # numpy draws Lomax; shift to the classic Pareto with support [scale, inf)
        raw = dist["scale"] * (1.0 + rng.pareto(dist["shape"], size=n))
    else:
        lo, hi = dist["lo"], dist["hi"]
        if lo != int(lo) or hi != int(hi) or lo < 1 or hi < lo:
            raise ParameterError(f"uniform bounds must be integers with 1 <= lo <= hi, got {lo}, {hi}")
        raw = rng.integers(int(lo), int(hi) + 1, size=n)
    lengths = np.clip(np.floor(raw + 0.5), 1, cap).astype(np.int64)
    return Workload.from_lengths(lengths.tolist())


def load_lengths(source: bytes | str) -> Workload:
    """Parse newline-separated positive integers; blank lines are skipped."""
    text = source.decode("utf-8") if isinstance(source, (bytes, bytearray)) else source
    lengths = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        token = line.strip()
        if not token:
            continue
        try:
            value = int(token)
        except ValueError:
            raise FormatError(f"not an integer: {token!r}", line=lineno) from None
        if value < 1:
            raise FormatError(f"length must be positive, got {value}", line=lineno)
        lengths.append(value)
    if not lengths:
        raise FormatError("no lengths found in input")
    return Workload.from_lengths(lengths)


def scale_lengths(w: Workload, ratio) -> Workload:
    """Truncate or repeat every sample by ``ratio``; rounds half-up, floors at 1."""
    r = ratio if isinstance(ratio, Fraction) else Fraction(str(ratio))
    if r <= 0:
        raise ParameterError(f"ratio must be > 0, got {ratio}")
    return Workload(tuple(Sample(s.id, max(1, _round_half_up(s.length * r))) for s in w.samples))


def nearest_rank(sorted_values: Sequence[int], p: float) -> int:
    idx = max(1, math.ceil(Fraction(str(p)) * len(sorted_values)))
    return sorted_values[idx - 1]


def summarize(w: Workload) -> dict:
    values = sorted(w.lengths)
    total = sum(values)
    return {
        "count": len(values),
        "min": values[0],
        "max": values[-1],
        "mean": total / len(values),
        "p50": nearest_rank(values, 0.50),
        "p90": nearest_rank(values, 0.90),
        "p99": nearest_rank(values, 0.99),
        "total": total,
    }
