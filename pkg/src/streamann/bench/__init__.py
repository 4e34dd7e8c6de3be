"""Workload harness, synthetic data and the command-line interface."""

from .stats import nearest_rank, percentiles
from .synth import synth_dataset, synth_split
from .workload import Workload, WorkloadConfig, build_base, prepare, run_workload

__all__ = [
    "Workload",
    "WorkloadConfig",
    "build_base",
    "nearest_rank",
    "percentiles",
    "prepare",
    "run_workload",
    "synth_dataset",
    "synth_split",
]
