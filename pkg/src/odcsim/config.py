"""Experiment and sweep configuration.

One flat JSON document configures an experiment. Every field defaults to the
golden setting of the parametric study: an 8-GPU node training a 1.5B model
(28 layers, bf16, 12*h^2 = 28.3M parameters per layer at h = 1536) on a
heavy-tailed long-context workload with minibatch size 4 and packing ratio 1.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from odcsim.commsim import ClusterSpec, Sharding
from odcsim.costmodel import CostModel
from odcsim.errors import ConfigError, ParameterError
from odcsim.partition import Strategy
from odcsim.runtime import Scheme
from odcsim.workload import DistributionSpec

FORMATS = ("json", "csv", "md")
SWEEP_AXES = ("minibatch_size", "max_length_ratio", "packing_ratio", "devices")


@dataclass(frozen=True)
class ExperimentConfig:
    # workload
    workload: str = "lognormal:mu=9.5,sigma=1.5"
    lengths_file: str | None = None
    num_samples: int = 2048
    max_length_cap: int = 65536
    max_length_ratio: float = 1.0
    # cluster
    devices: int = 8
    per_node: int = 8
    layer_elems: int = 28_311_552
    elem_bytes: int = 2
    intra_bw: float = 300e9
    inter_bw: float = 12.5e9
    layers: int = 28
    # cost; time_per_cost_unit converts alpha*s^2 + beta*s into seconds per layer
    alpha: float = 1.0
    beta: float = 0.0
    time_per_cost_unit: float = 6e-11
    backward_multiplier: float = 1.0
    # batching
    strategy: str = "lb-micro"
    scheme: str = "odc"
    sharding: str = "full"
    minibatch_size: int = 4
    packing_ratio: float = 1.0
    pool_minibatches: int = 4
    seed: int = 0
    format: str = "json"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        for name in ("strategy", "scheme", "sharding"):
            enum_cls = {"strategy": Strategy, "scheme": Scheme, "sharding": Sharding}[name]
            need(getattr(self, name) in {e.value for e in enum_cls}, name,
                 f"must be one of {[e.value for e in enum_cls]}, got {getattr(self, name)!r}")
        need(self.format in FORMATS, "format", f"must be one of {list(FORMATS)}")
        need(self.packing_ratio >= 1, "packing_ratio", "must be >= 1")
        need(self.minibatch_size >= 1, "minibatch_size", "must be >= 1")
        need(self.pool_minibatches >= 1, "pool_minibatches", "must be >= 1")
        need(self.num_samples >= 1, "num_samples", "must be >= 1")
        need(self.max_length_cap >= 1, "max_length_cap", "must be >= 1")
        need(self.max_length_ratio > 0, "max_length_ratio", "must be > 0")
        need(self.devices >= 1, "devices", "must be >= 1")
        need(1 <= self.per_node <= self.devices and self.devices % self.per_node == 0, "per_node",
             f"must divide devices ({self.devices})")
        need(self.layer_elems >= 1, "layer_elems", "must be >= 1")
        need(self.elem_bytes >= 1, "elem_bytes", "must be >= 1")
        need(self.intra_bw > 0, "intra_bw", "must be > 0")
        need(self.inter_bw > 0, "inter_bw", "must be > 0")
        need(self.layers >= 1, "layers", "must be >= 1")
        need(self.alpha >= 0 and self.beta >= 0 and self.alpha + self.beta > 0, "alpha",
             "need alpha, beta >= 0 with alpha + beta > 0")
        need(self.time_per_cost_unit > 0, "time_per_cost_unit", "must be > 0")
        need(self.backward_multiplier >= 0, "backward_multiplier", "must be >= 0")
        need(not (self.strategy == Strategy.LB_MINI.value and self.scheme == Scheme.COLLECTIVE.value), "strategy",
             "lb-mini yields unequal microbatch counts and requires scheme 'odc'")
        need(not (self.sharding == Sharding.HYBRID.value and self.per_node == self.devices), "sharding",
             "hybrid sharding needs more than one node")
        if self.lengths_file is None:
            try:
                DistributionSpec.parse(self.workload)
            except ParameterError as exc:
                raise ConfigError("workload", str(exc)) from None

    # -- derived objects ---------------------------------------------------

    @property
    def cost(self) -> CostModel:
        return CostModel(self.alpha, self.beta, self.layers)

    @property
    def cluster(self) -> ClusterSpec:
        return ClusterSpec(
            devices=self.devices,
            per_node=self.per_node,
            shard_elems=-(-self.layer_elems // self.devices),
            elem_bytes=self.elem_bytes,
            intra_bw=self.intra_bw,
            inter_bw=self.inter_bw,
            layers=self.layers,
        )

    def with_(self, **changes) -> ExperimentConfig:
        return replace(self, **changes)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        kwargs = {}
        for key, value in data.items():
            default = known[key].default
            try:
                if value is None or default is None or isinstance(default, str):
                    kwargs[key] = value
                elif isinstance(default, int):
                    if isinstance(value, float) and not value.is_integer():
                        raise ValueError(f"expected an integer, got {value}")
                    kwargs[key] = int(value)
                else:
                    kwargs[key] = float(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from None
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("<document>", "config must be a JSON object")
        return cls.from_dict(data)


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    base: ExperimentConfig = field(default_factory=ExperimentConfig)

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError("axis", f"must be one of {list(SWEEP_AXES)}, got {self.axis!r}")
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ConfigError("values", "must be non-empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("values", "must be strictly increasing")
        for v in self.values:
            self.point(v)

    def point(self, value) -> ExperimentConfig:
        if self.axis in ("minibatch_size", "devices"):
            if int(value) != value:
                raise ConfigError("values", f"{self.axis} values must be integers")
            value = int(value)
        changes = {self.axis: value}
        if self.axis == "devices":
            changes["per_node"] = min(self.base.per_node, value)
        return self.base.with_(**changes)
