"""Simulator and scheduling library for sharded data-parallel training under
imbalanced sequence lengths: per-layer collectives vs on-demand communication."""

from odcsim.costmodel import CostModel, MemoryBudget
from odcsim.workload import Sample, Workload

__version__ = "0.1.0"

__all__ = ["CostModel", "MemoryBudget", "Sample", "Workload", "__version__"]
