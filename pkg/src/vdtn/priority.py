"""Priority values, the queue ordering, and aging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

from .model import AppClass, Task, VehicleClass

MAX_APP_RANK = max(AppClass).rank


class DominanceViolation(ValueError):
    """Weights let an application class outrank a better vehicle class."""


class ClockError(ValueError):
    pass


@dataclass(frozen=True)
class PriorityWeights:
    alpha: float = 10.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise DominanceViolation(f"weights must be positive (alpha={self.alpha}, beta={self.beta})")
        if not self.alpha > self.beta * MAX_APP_RANK:
            raise DominanceViolation(
                f"alpha={self.alpha} must exceed {MAX_APP_RANK} x beta={self.beta * MAX_APP_RANK}"
            )

    def scaled(self, factor: float) -> "PriorityWeights":
        return PriorityWeights(self.alpha * factor, self.beta * factor)

    @property
    def best_total(self) -> float:
        return self.alpha * VehicleClass.HIGH.rank + self.beta * AppClass.SAFETY.rank


@dataclass(frozen=True)
class AgingPolicy:
    """Every ``interval`` ticks of waiting lowers the priority value by ``step``, down to ``floor``."""

    interval: int = 100
    step: float = 1.0
    floor: float = 11.0

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("aging interval must be >= 1 tick")
        if self.step <= 0 or self.floor <= 0:
            raise ValueError("aging step and floor must be positive")

    @classmethod
    def for_weights(cls, weights: PriorityWeights, interval: int = 100) -> "AgingPolicy":
        # step of one app rank, floor at the best attainable total
        return cls(interval=interval, step=weights.beta, floor=weights.best_total)


def compute_dt_priority(vclass: VehicleClass, weights: PriorityWeights) -> float:
    return weights.alpha * VehicleClass(vclass).rank


def compute_app_priority(app: AppClass, weights: PriorityWeights) -> float:
    return weights.beta * AppClass(app).rank


def total_priority(p_dt: float, p_app: float) -> float:
    return p_dt + p_app


def task_priority(vclass: VehicleClass, app: AppClass, weights: PriorityWeights) -> float:
    return total_priority(compute_dt_priority(vclass, weights), compute_app_priority(app, weights))


def effective_priority(task: Task, now: int, aging: Optional[AgingPolicy]) -> float:
    if now < task.enqueue_time:
        raise ClockError(f"task {task.id}: now={now} precedes enqueue_time={task.enqueue_time}")
    if aging is None:
        return task.base_priority
    steps = (now - task.enqueue_time) // aging.interval
    return max(aging.floor, task.base_priority - aging.step * steps)


def sort_key(task: Task, now: int, aging: Optional[AgingPolicy]) -> Tuple[float, int, int]:
    return (effective_priority(task, now, aging), task.enqueue_time, task.id)


def compare(a: Task, b: Task, now: int, aging: Optional[AgingPolicy]) -> int:
    """Negative if ``a`` is served first, positive if ``b`` is, zero only for the same task."""
    ka, kb = sort_key(a, now, aging), sort_key(b, now, aging)
    return (ka > kb) - (ka < kb)
