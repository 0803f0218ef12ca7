from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdtn.model import (
    BaseStationViolation,
    BijectionViolation,
    ChannelModel,
    DataCenterConfig,
    DataSample,
    DigitalTwin,
    DisjointnessViolation,
    IsolationViolation,
    ResourceUnit,
    Task,
    Vehicle,
    VehicleClass,
    AppClass,
    classify_vehicle_type,
    validate_world,
)
from vdtn.workload import build_world

from conftest import tiny_world


def test_class_ranks():
    assert [c.rank for c in VehicleClass] == [1, 2, 3]
    assert [a.rank for a in AppClass] == [1, 2, 3, 4, 5]


@pytest.mark.parametrize("label,expected", [
    ("Ambulance", VehicleClass.HIGH),
    ("fire department", VehicleClass.HIGH),
    ("cash transportation", VehicleClass.MEDIUM),
    ("Medical Association van", VehicleClass.MEDIUM),
    ("private car", VehicleClass.NORMAL),
    ("unknown thing", VehicleClass.NORMAL),
])
def test_vehicle_categories(label, expected):
    assert classify_vehicle_type(label) is expected


def test_vehicle_rejects_bad_kinematics():
    with pytest.raises(ValueError):
        Vehicle(0, VehicleClass.HIGH, speed=-1.0)
    with pytest.raises(ValueError):
        Vehicle(0, VehicleClass.HIGH, angle=360.0)


def test_task_needs_resources_and_sorts_them():
    with pytest.raises(ValueError):
        Task(0, 0, VehicleClass.HIGH, AppClass.SAFETY, (), 0, 11.0)
    t = Task(0, 0, VehicleClass.HIGH, AppClass.SAFETY, (5, 2, 5), 0, 11.0)
    assert t.required_resources == (2, 5)


def test_resource_holder_fields_move_together():
    r = ResourceUnit(3)
    assert r.free and r.holder_class is None and r.holder_task is None
    r.holders[3] = 10
    r.holders[1] = 11
    assert r.holder_class is VehicleClass.HIGH and r.holder_task == 11
    assert r.held_by(10) and not r.held_by(12)


def test_config_validation():
    with pytest.raises(ValueError):
        DataCenterConfig(num_datacenters=0)
    with pytest.raises(ValueError):
        ChannelModel(transit_rate=0)
    assert DataCenterConfig().num_vms == 20


def _two_twin_world(samples_a, samples_b):
    w = tiny_world([1, 3], [(0, 1)])
    w.twins[0].dataset = [DataSample(s, 0) for s in samples_a]
    w.twins[1].dataset = [DataSample(s, 1) for s in samples_b]
    return w


def test_validate_disjoint_world_is_clean():
    assert validate_world(_two_twin_world([1, 2], [3])) == []


def test_validate_shared_sample():
    assert validate_world(_two_twin_world([1, 2], [2])) == [DisjointnessViolation(2, 0, 1)]


def test_validate_vehicle_with_two_twins():
    w = tiny_world([1, 2, 3, 3, 3, 3, 3, 3], [(i, i + 1) for i in range(7)])
    w.twins[7].vehicle_id = 7
    w.twins[8] = DigitalTwin(8, 7, VehicleClass.NORMAL, 30.0, [DataSample(99, 8)])
    w.adjacency[8] = [7]
    assert validate_world(w) == [BijectionViolation(7, (7, 8))]


def test_validate_isolated_twin_and_bad_station():
    w = tiny_world([1, 2, 3], [(0, 1)])
    w.vehicles[1].base_station = 9
    assert validate_world(w) == [IsolationViolation(2), BaseStationViolation(1, 9)]


def test_singleton_world_may_be_isolated():
    assert validate_world(tiny_world([2], [])) == []


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 10_000))
def test_generated_worlds_are_sound(clusters, per_cluster, seed):
    w = build_world(num_clusters=clusters, per_cluster=per_cluster, seed=seed)
    assert validate_world(w) == []
    ids = [s.sample_id for t in w.twins.values() for s in t.dataset]
    assert len(ids) == len(set(ids)) == w.num_samples
