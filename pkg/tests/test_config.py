import json

import pytest
from hypothesis import given, strategies as st

from odcsim.config import ExperimentConfig, SweepSpec
from odcsim.errors import ConfigError


def test_golden_defaults():
    cfg = ExperimentConfig()
    assert (cfg.minibatch_size, cfg.devices, cfg.packing_ratio) == (4, 8, 1.0)
    assert cfg.cluster.shard_elems == 28_311_552 // 8
    assert cfg.cost.layers == cfg.cluster.layers == 28


@pytest.mark.parametrize("field,value", [
    ("packing_ratio", 0.5), ("minibatch_size", 0), ("strategy", "greedy"), ("scheme", "ring"),
    ("sharding", "none"), ("per_node", 3), ("format", "xml"), ("workload", "lognormal:mu=1"),
    ("intra_bw", 0), ("alpha", -1),
])
def test_violations_name_the_field(field, value):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(**{field: value})
    assert exc.value.field == field


def test_lb_mini_collective_rejected_at_validation():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(strategy="lb-mini", scheme="collective")
    assert exc.value.field == "strategy"
    ExperimentConfig(strategy="lb-mini", scheme="odc")


def test_hybrid_needs_two_nodes():
    with pytest.raises(ConfigError):
        ExperimentConfig(sharding="hybrid")
    ExperimentConfig(sharding="hybrid", devices=16)


def test_from_dict_rejects_unknown_and_bad_types():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"minibatchsize": 3})
    assert exc.value.field == "minibatchsize"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"devices": 8.5})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{nope")


def test_partial_document_takes_defaults():
    cfg = ExperimentConfig.from_json('{"minibatch_size": 2, "packing_ratio": 2}')
    assert cfg == ExperimentConfig(minibatch_size=2, packing_ratio=2.0)


configs = st.builds(
    ExperimentConfig,
    strategy=st.sampled_from(["local-sort", "lb-micro", "verl-native", "verl-optimized"]),
    scheme=st.sampled_from(["collective", "odc"]),
    minibatch_size=st.integers(1, 64),
    packing_ratio=st.floats(1, 8, allow_nan=False),
    seed=st.integers(0, 10**6),
    beta=st.floats(0, 1e4, allow_nan=False),
    format=st.sampled_from(["json", "csv", "md"]),
)


@given(configs)
def test_roundtrip(cfg):
    text = cfg.to_json()
    assert ExperimentConfig.from_json(text) == cfg
    assert ExperimentConfig.from_json(text).to_json() == text
    assert json.loads(text) == cfg.to_dict()


def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec("layers", (1, 2))
    with pytest.raises(ConfigError):
        SweepSpec("devices", ())
    with pytest.raises(ConfigError):
        SweepSpec("devices", (16, 8))
    with pytest.raises(ConfigError):
        SweepSpec("packing_ratio", (0.5, 1))
    spec = SweepSpec("devices", [4, 8, 16])
    assert spec.values == (4, 8, 16)
    assert spec.point(4).per_node == 4 and spec.point(16).per_node == 8
