import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_equal_costs, solution
from odcsim.commsim import (
    ClusterSpec, Op, Sharding, buffer_requirement, comm_time, comm_volume, hybrid_step_sync_time, hybrid_volume,
    op_times, simulate, simulate_plan,
)
from odcsim.costmodel import CostModel, MemoryBudget
from odcsim.errors import ModeError, ParameterError
from odcsim.partition import Mode, plan
from odcsim.runtime import Scheme, runtime
from odcsim.workload import Workload

INF = math.inf


def cluster(D=8, G=8, K=1, **kw):
    return ClusterSpec(devices=D, per_node=G, shard_elems=K, **kw)


def test_volume_examples():
    v = comm_volume("collective", "param-gather", cluster(16, 8))
    assert (v.intra, v.inter, v.total) == (Fraction(105, 8), Fraction(15, 8), 15)
    assert float(v.intra) == 13.125 and float(v.inter) == 1.875
    v = comm_volume("odc", "param-gather", cluster(16, 8))
    assert (v.intra, v.inter, v.total) == (7, 8, 15)
    for scheme in Scheme:
        v = comm_volume(scheme, Op.GRAD_REDUCE, cluster(8, 8))
        assert (v.intra, v.inter, v.total) == (7, 0, 7)


def test_hybrid_examples():
    assert hybrid_volume("param-gather", cluster(16, 8)).to_dict() == {"intra": 14, "inter": 0, "total": 14}
    assert hybrid_volume("grad-reduce", cluster(32, 8)).intra == 28
    with pytest.raises(ParameterError):
        hybrid_volume("param-gather", cluster(8, 8))


def test_comm_time_examples():
    cl = cluster(16, 8, K=10**9, intra_bw=300e9, inter_bw=100e9)
    coll = comm_time(comm_volume("collective", "param-gather", cl), cl, "collective")
    odc = comm_time(comm_volume("odc", "param-gather", cl), cl, "odc")
    assert coll == pytest.approx(0.0875, rel=1e-12)
    assert odc == pytest.approx(7 * 2 / 300 + 8 * 2 / 100, rel=1e-12)
    assert round(odc, 4) == 0.2067
    one = cluster(8, 8, K=10**9)
    for scheme in Scheme:
        assert comm_time(comm_volume(scheme, "param-gather", one), one, scheme) == pytest.approx(7e9 * 2 / 300e9)


@pytest.mark.parametrize("M,N,per", [(1000, 10, 100), (7, 1, 7), (10, 3, 4)])
def test_buffer_requirement(M, N, per):
    assert buffer_requirement(M, N) == {"per_client": per, "per_server_total": per * N}


def test_cluster_validation():
    for kw in [dict(D=12, G=8), dict(intra_bw=0), dict(K=0), dict(D=0)]:
        with pytest.raises(ParameterError):
            cluster(**kw)


@given(st.sampled_from([8, 16, 32, 64]), st.sampled_from([1, 2, 4, 8]), st.integers(1, 10**9))
def test_volume_conservation(D, G, K):
    cl = cluster(D, G, K)
    coll, odc = comm_volume("collective", "param-gather", cl), comm_volume("odc", "param-gather", cl)
    assert coll.total == odc.total == (D - 1) * K
    if D > G >= 2:
        assert odc.inter >= coll.inter


def test_simulate_checks():
    var = solution([[8], [2, 2]], Mode.VARIABLE_MICRO)
    with pytest.raises(ModeError):
        simulate(var, cluster(2, 2), CostModel(0, 1, 1), "collective")
    with pytest.raises(ParameterError):
        simulate(solution([[1], [1]]), cluster(4, 4), CostModel(0, 1, 1), "odc")
    with pytest.raises(ParameterError):
        simulate(solution([[1], [1]]), cluster(2, 2, layers=3), CostModel(0, 1, 2), "odc")


@pytest.mark.parametrize("scheme", list(Scheme))
def test_two_layer_pipeline_hand_trace(scheme):
    # per-layer compute 8 (4 forward + 4 backward), gather and reduce 1 each:
    # every prefetch hides behind the previous slot, only the first gather
    # and the last layer's gradient push stick out
    cl = cluster(2, 2, K=1, elem_bytes=1, intra_bw=1.0, layers=2)
    sol = solution([[8], [8]])
    trace, rep = simulate(sol, cl, CostModel(0, 1, 2), scheme)
    assert rep.total_time == 2 * 8 + 1 + 1
    assert trace.total_time == rep.total_time
    assert trace.exposed_comm_time == [2, 2]
    kinds = [e["kind"] for e in trace.events[0]]
    assert kinds.count("param-gather") == 4 and kinds.count("grad-reduce") == 2 and kinds.count("compute") == 4


def test_trace_invariants_and_exports():
    cl = cluster(2, 2, K=1, elem_bytes=1, intra_bw=0.5, layers=3)
    trace, rep = simulate(solution([[6, 3], [2, 5]]), cl, CostModel(0, 1, 3), "collective")
    for evs in trace.events:
        comp = sorted((e["start"], e["end"]) for e in evs if e["kind"] == "compute")
        assert all(a[1] <= b[0] for a, b in zip(comp, comp[1:]))
        assert max(e["end"] for e in evs) <= trace.total_time
    assert max(e["end"] for evs in trace.events for e in evs) == trace.total_time
    keys = [(e["start"], e["device"]) for e in trace.sorted_events()]
    assert keys == sorted(keys)
    parsed = json.loads(trace.to_json())
    assert parsed["total_time"] == trace.total_time
    chrome = json.loads(trace.to_chrome_trace())
    assert {e["ph"] for e in chrome["traceEvents"]} == {"X"}
    assert len(chrome["traceEvents"]) == sum(map(len, trace.events))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_infinite_bandwidth_matches_analytic(seed):
    rng = np.random.default_rng(seed)
    costs = random_equal_costs(rng)
    L = int(rng.integers(1, 5))
    cost = CostModel(0, 1, L)
    sol = solution(costs)
    cl = cluster(len(costs), len(costs), K=1000, intra_bw=INF, inter_bw=INF, layers=L)
    for scheme in Scheme:
        _, rep = simulate(sol, cl, cost, scheme, record=False)
        assert rep.total_time == runtime(sol, cost, scheme).total_time


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(1.5, 10))
def test_more_bandwidth_never_slower(seed, factor):
    rng = np.random.default_rng(seed)
    costs = random_equal_costs(rng, max_d=4)
    D = len(costs)
    sol = solution(costs)
    cost = CostModel(0, 1, 2)
    base = dict(devices=D, per_node=D, shard_elems=10, elem_bytes=1, layers=2)
    for scheme in Scheme:
        slow = simulate(sol, ClusterSpec(intra_bw=1.0, **base), cost, scheme, record=False)[1].total_time
        fast = simulate(sol, ClusterSpec(intra_bw=factor, **base), cost, scheme, record=False)[1].total_time
        assert fast <= slow


def test_short_sequences_ordering():
    w = Workload.from_lengths([256] * 512)
    cost = CostModel(1, 0, 28)
    steps = plan("lb-micro", w, 16, 4, MemoryBudget(512), cost)
    cl = ClusterSpec(devices=16, per_node=8, shard_elems=28_311_552 // 16)
    tpc = 6e-11
    coll = simulate_plan(steps, cl, cost, "collective", time_per_cost_unit=tpc)[0].total_time
    odc_full = simulate_plan(steps, cl, cost, "odc", time_per_cost_unit=tpc)[0].total_time
    odc_hyb = simulate_plan(steps, cl, cost, "odc", Sharding.HYBRID, time_per_cost_unit=tpc)[0].total_time
    assert odc_full > coll
    assert odc_hyb < odc_full


def test_hybrid_sync_is_per_step():
    cl = ClusterSpec(devices=16, per_node=8, shard_elems=8, elem_bytes=1, inter_bw=1.0, layers=2)
    assert hybrid_step_sync_time(cl) == 2 * 8 * 8 / 8
    assert op_times(cl, "odc", "hybrid").step_sync == hybrid_step_sync_time(cl)
    assert op_times(cl, "odc", "full").step_sync == 0
    assert hybrid_step_sync_time(ClusterSpec(devices=8, per_node=8)) == 0
