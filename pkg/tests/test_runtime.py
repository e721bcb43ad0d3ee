import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import LINEAR, random_equal_costs, solution
from odcsim.costmodel import CostModel
from odcsim.errors import DegenerateInputError, ModeError, ParameterError
from odcsim.partition import Mode
from odcsim.runtime import (
    Scheme, acceleration_ratio, bubble_rate, combine, make_report, runtime, runtime_collective, runtime_odc,
)


def linear(L):
    return CostModel(0, 1, L)


def test_collective_examples():
    r = runtime_collective(solution([[10], [10]]), linear(1))
    assert r.total_time == 10 and r.bubble_rate == 0
    r = runtime_collective(solution([[4, 4], [6, 2]]), linear(1))
    assert r.total_time == 10 and r.per_device_busy == (8, 8) and r.bubble_rate == pytest.approx(0.2, abs=1e-15)
    r3 = runtime_collective(solution([[4, 4], [6, 2]]), linear(3))
    assert r3.total_time == 30 and r3.bubble_rate == pytest.approx(0.2, abs=1e-15)


def test_odc_examples():
    r = runtime_odc(solution([[4, 4], [6, 2]]), linear(1))
    assert r.total_time == 8 and r.bubble_rate == 0
    sol = solution([[5], [9]])
    assert runtime_odc(sol, linear(1)).total_time == runtime_collective(sol, linear(1)).total_time == 9
    var = solution([[8], [2, 2, 2, 2]], Mode.VARIABLE_MICRO)
    assert runtime_odc(var, linear(1)).total_time == 8


def test_collective_rejects_variable_micro():
    with pytest.raises(ModeError):
        runtime(solution([[8], [2, 2]], Mode.VARIABLE_MICRO), LINEAR, "collective")


def test_bubble_examples():
    assert bubble_rate(runtime_collective(solution([[4, 4], [6, 2]]), LINEAR)) == pytest.approx(0.2)
    assert make_report(Scheme.ODC, 10, [10, 0], 1).bubble_rate == 0.5
    with pytest.raises(DegenerateInputError):
        make_report(Scheme.ODC, 0, [0, 0], 0)


def test_acceleration_examples():
    a = runtime_collective(solution([[4, 4], [6, 2]]), LINEAR)
    b = runtime_odc(solution([[4, 4], [6, 2]]), LINEAR)
    assert acceleration_ratio(a, b) == 1.25
    assert acceleration_ratio(b, b) == 1.0


def test_combine_sums_steps():
    a = runtime_odc(solution([[4, 4], [6, 2]]), LINEAR)
    b = runtime_odc(solution([[3], [1]]), LINEAR)
    c = combine([a, b])
    assert c.total_time == 11 and c.per_device_busy == (11, 9) and c.steps == 2 and c.samples == 6
    with pytest.raises(ParameterError):
        combine([])
    with pytest.raises(ParameterError):
        combine([a, runtime_collective(solution([[3], [1]]), LINEAR)])


def test_report_dict():
    d = runtime_odc(solution([[4, 4], [6, 2]]), LINEAR).to_dict()
    assert d["scheme"] == "odc" and d["per_device_busy"] == [8, 8]


seeds = st.integers(0, 2**32 - 1)


@given(seeds)
def test_odc_never_slower(seed):
    sol = solution(random_equal_costs(np.random.default_rng(seed)))
    assert runtime_odc(sol, LINEAR).total_time <= runtime_collective(sol, LINEAR).total_time


@given(seeds)
def test_identical_devices_tie(seed):
    rng = np.random.default_rng(seed)
    row = rng.integers(1, 50, size=int(rng.integers(1, 6))).tolist()
    sol = solution([row] * int(rng.integers(1, 5)))
    assert runtime_odc(sol, LINEAR).total_time == runtime_collective(sol, LINEAR).total_time


@given(seeds, st.integers(2, 9))
def test_layer_scaling(seed, c):
    sol = solution(random_equal_costs(np.random.default_rng(seed)))
    for scheme in Scheme:
        a, b = runtime(sol, linear(1), scheme), runtime(sol, linear(c), scheme)
        assert b.total_time == c * a.total_time
        assert b.bubble_rate == pytest.approx(a.bubble_rate, abs=1e-12)


@given(seeds, st.integers(2, 1000))
def test_cost_scaling(seed, c):
    sol = solution(random_equal_costs(np.random.default_rng(seed)))
    coll = [runtime(sol, CostModel(0, f), Scheme.COLLECTIVE) for f in (1, c)]
    odc = [runtime(sol, CostModel(0, f), Scheme.ODC) for f in (1, c)]
    assert coll[1].bubble_rate == pytest.approx(coll[0].bubble_rate, abs=1e-12)
    assert acceleration_ratio(coll[1], odc[1]) == pytest.approx(acceleration_ratio(coll[0], odc[0]), rel=1e-12)


@given(seeds)
def test_total_covers_busiest(seed):
    sol = solution(random_equal_costs(np.random.default_rng(seed)))
    for scheme in Scheme:
        r = runtime(sol, LINEAR, scheme)
        assert r.total_time >= max(r.per_device_busy)
        assert 0 <= r.bubble_rate < 1
