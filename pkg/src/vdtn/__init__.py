"""Priority-based scheduling for vehicular digital-twin networks, with baselines and a simulator."""

from __future__ import annotations

from .engine import RunLog, SimConfig, run, run_with_churn
from .metrics import MetricsReport, aggregate, compute_metrics
from .model import AppClass, Task, VehicleClass, World
from .priority import AgingPolicy, PriorityWeights
from .schedulers import PriorityVDTN, RoundRobin, Throttled, make_policy
from .workload import build_world

__version__ = "0.1.0"

__all__ = [
    "AgingPolicy", "AppClass", "MetricsReport", "PriorityVDTN", "PriorityWeights",
    "RoundRobin", "RunLog", "SimConfig", "Task", "Throttled", "VehicleClass", "World",
    "aggregate", "build_world", "compute_metrics", "make_policy", "run", "run_with_churn",
]
