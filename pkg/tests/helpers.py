"""Builders shared by the test modules."""

import numpy as np

from odcsim.costmodel import CostModel
from odcsim.partition import EMPTY_MICROBATCH, BatchingSolution, Microbatch, Mode

LINEAR = CostModel(0, 1)


def solution(per_device_costs, mode=Mode.EQUAL_MICRO) -> BatchingSolution:
    """Under the linear cost model a sample's length is its cost; 0 means padding."""
    next_id = 0
    devices = []
    for dev in per_device_costs:
        mbs = []
        for c in dev:
            if c == 0:
                mbs.append(EMPTY_MICROBATCH)
            else:
                mbs.append(Microbatch((next_id,), (int(c),)))
                next_id += 1
        devices.append(mbs)
    return BatchingSolution(devices, mode, max(len(d) for d in per_device_costs))


def random_equal_costs(rng: np.random.Generator, max_d=6, max_m=5, hi=50) -> list[list[int]]:
    D, M = int(rng.integers(1, max_d + 1)), int(rng.integers(1, max_m + 1))
    costs = rng.integers(1, hi + 1, size=(D, M))
    # sprinkle padding, keeping at least one real microbatch per device
    pad = rng.random((D, M)) < 0.15
    pad[:, 0] = False
    return np.where(pad, 0, costs).tolist()
