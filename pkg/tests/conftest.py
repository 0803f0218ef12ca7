from __future__ import annotations

from typing import Dict, Iterable, List, Sequence, Tuple

import pytest

from vdtn.model import (
    AppClass,
    ChannelModel,
    DataCenterConfig,
    DataSample,
    DigitalTwin,
    ResourceUnit,
    Task,
    Vehicle,
    VehicleClass,
    World,
)
from vdtn.priority import PriorityWeights, compute_dt_priority, task_priority


def make_task(tid: int, vclass=VehicleClass.NORMAL, app=AppClass.SAFETY, enqueue: int = 0,
              resources: Sequence[int] = (0,), weights: PriorityWeights = PriorityWeights(),
              twin: int = 0, payload: int = 1) -> Task:
    vclass, app = VehicleClass(vclass), AppClass(app)
    return Task(tid, twin, vclass, app, tuple(resources), enqueue,
                task_priority(vclass, app, weights), payload)


def tiny_world(classes: Sequence[int], edges: Iterable[Tuple[int, int]],
               stations: Sequence[int] = None, channel: ChannelModel = None,
               datacenter: DataCenterConfig = None) -> World:
    """Hand-built world: vehicle/twin i has class ``classes[i]``; one resource per twin."""
    n = len(classes)
    stations = list(stations) if stations is not None else [0] * n
    adj: Dict[int, List[int]] = {i: [] for i in range(n)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    vehicles = {i: Vehicle(i, VehicleClass(c), base_station=stations[i]) for i, c in enumerate(classes)}
    twins = {
        i: DigitalTwin(i, i, VehicleClass(c), compute_dt_priority(VehicleClass(c), PriorityWeights()),
                       [DataSample(i, i)])
        for i, c in enumerate(classes)
    }
    return World(vehicles, twins, {k: sorted(v) for k, v in adj.items()}, [list(range(n))],
                 {i: ResourceUnit(i) for i in range(n)}, sorted(set(stations)),
                 datacenter or DataCenterConfig(), channel or ChannelModel())


@pytest.fixture
def weights() -> PriorityWeights:
    return PriorityWeights()


# --- acceptance verdicts ----------------------------------------------------------

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict line; the summary prints them in criterion order."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(line)
        request.config.stash[_VERDICTS].append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, [])
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(verdicts):
            terminalreporter.write_line(line)
