"""Domain types shared by the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Tuple


class VehicleClass(IntEnum):
    """Vehicle category code. Lower rank means more important."""

    HIGH = 1
    MEDIUM = 2
    NORMAL = 3

    @property
    def rank(self) -> int:
        return int(self)


class AppClass(IntEnum):
    SAFETY = 1
    TRAFFIC_MANAGEMENT = 2
    EFFICIENCY = 3
    INFOTAINMENT = 4
    SOCIAL = 5

    @property
    def rank(self) -> int:
        return int(self)


# Vehicle categories per class. Matched case-insensitively on substrings.
VEHICLE_CATEGORIES: Dict[VehicleClass, Tuple[str, ...]] = {
    VehicleClass.HIGH: (
        "police", "army", "customs", "ambulance", "law enforcement",
        "fire", "mobile medical", "detainee",
    ),
    VehicleClass.MEDIUM: (
        "medical association", "cash", "blood", "organ", "sanitary",
    ),
    VehicleClass.NORMAL: ("private", "van", "goods", "passenger", "car", "truck", "bus"),
}


def classify_vehicle_type(label: str) -> VehicleClass:
    """Map a free-form vehicle type to its class; unknown labels are Normal."""
    text = label.strip().lower()
    # medium first: "mobile medical" must not swallow "medical association"
    for vclass in (VehicleClass.MEDIUM, VehicleClass.HIGH, VehicleClass.NORMAL):
        if any(key in text for key in VEHICLE_CATEGORIES[vclass]):
            return vclass
    return VehicleClass.NORMAL


@dataclass
class Vehicle:
    id: int
    vclass: VehicleClass
    position: Tuple[float, float] = (0.0, 0.0)
    speed: float = 0.0
    angle: float = 0.0
    vehicle_type: str = "private"
    base_station: Optional[int] = 0

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"vehicle {self.id}: negative speed {self.speed}")
        if not 0.0 <= self.angle < 360.0:
            raise ValueError(f"vehicle {self.id}: angle {self.angle} outside [0, 360)")


@dataclass(frozen=True)
class DataSample:
    sample_id: int
    owner_twin: int
    payload_size: int = 1


@dataclass
class DigitalTwin:
    id: int
    vehicle_id: int
    vclass: VehicleClass
    p_dt: float
    dataset: List[DataSample] = field(default_factory=list)


class TaskState(str, Enum):
    QUEUED = "Queued"
    GRANTED = "Granted"
    EXCHANGING = "Exchanging"
    DONE = "Done"
    FAILED = "Failed"


@dataclass
class Task:
    """Private data from one vehicle that must be processed through its twin."""

    id: int
    twin_id: int
    vclass: VehicleClass
    app: AppClass
    required_resources: Tuple[int, ...]
    enqueue_time: int
    base_priority: float
    payload_size: int = 1
    state: TaskState = TaskState.QUEUED

    def __post_init__(self):
        if not self.required_resources:
            raise ValueError(f"task {self.id} requires no resources")
        self.required_resources = tuple(sorted(set(self.required_resources)))


@dataclass
class ResourceUnit:
    """A grantable cloud resource.

    Under the class-gated acquisition rule one task per vehicle class may
    hold the unit at once, so holders are keyed by class rank. The reported
    ``holder_class`` is the most important current holder.
    """

    id: int
    holders: Dict[int, int] = field(default_factory=dict)
    release_time: Optional[int] = None
    blocked_until: int = 0  # resync outage after topology churn

    @property
    def holder_class(self) -> Optional[VehicleClass]:
        if not self.holders:
            return None
        return VehicleClass(min(self.holders))

    @property
    def holder_task(self) -> Optional[int]:
        if not self.holders:
            return None
        return self.holders[min(self.holders)]

    @property
    def free(self) -> bool:
        return not self.holders

    def held_by(self, task_id: int) -> bool:
        return task_id in self.holders.values()


@dataclass(frozen=True)
class ChannelModel:
    """Base-station channel: ``transit_rate`` data units per tick; ``horizon`` is the bound window."""

    transit_rate: float = 4.0
    horizon: int = 100

    def __post_init__(self):
        if self.transit_rate <= 0:
            raise ValueError("transit_rate must be positive")
        if self.horizon < 1:
            raise ValueError("channel horizon must be >= 1 tick")

    def transfer_ticks(self, size: float) -> int:
        return max(1, math.ceil(size / self.transit_rate))

    @property
    def window_capacity(self) -> float:
        return self.transit_rate * self.horizon


@dataclass(frozen=True)
class DataCenterConfig:
    num_datacenters: int = 2
    vms_per_datacenter: int = 10
    vm_memory: int = 1024  # MB, i.e. 1 GB per VM
    vm_bandwidth: int = 1000
    host_mips: int = 1000
    os_label: str = "Linux"
    arch_label: str = "Xen"

    def __post_init__(self):
        for name in ("num_datacenters", "vms_per_datacenter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("vm_memory", "vm_bandwidth", "host_mips"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def num_vms(self) -> int:
        return self.num_datacenters * self.vms_per_datacenter


@dataclass
class World:
    vehicles: Dict[int, Vehicle]
    twins: Dict[int, DigitalTwin]
    adjacency: Dict[int, List[int]]
    clusters: List[List[int]]
    resources: Dict[int, ResourceUnit]
    base_stations: List[int]
    datacenter: DataCenterConfig = field(default_factory=DataCenterConfig)
    channel: ChannelModel = field(default_factory=ChannelModel)
    flags: List[str] = field(default_factory=list)

    @property
    def num_samples(self) -> int:
        return sum(len(t.dataset) for t in self.twins.values())

    def twin_of_vehicle(self, vehicle_id: int) -> DigitalTwin:
        for twin in self.twins.values():
            if twin.vehicle_id == vehicle_id:
                return twin
        raise KeyError(vehicle_id)


# --- structural checks --------------------------------------------------------


@dataclass(frozen=True)
class DisjointnessViolation:
    sample_id: int
    twin_a: int
    twin_b: int


@dataclass(frozen=True)
class BijectionViolation:
    vehicle_id: int
    twin_ids: Tuple[int, ...] = ()


@dataclass(frozen=True)
class IsolationViolation:
    twin_id: int


@dataclass(frozen=True)
class BaseStationViolation:
    vehicle_id: int
    base_station: Optional[int] = None


def validate_world(world: World) -> list:
    """Return one record per broken structural requirement; empty if sound."""
    violations: list = []

    by_vehicle: Dict[int, List[int]] = {}
    for twin in world.twins.values():
        by_vehicle.setdefault(twin.vehicle_id, []).append(twin.id)
    for vid in sorted(set(by_vehicle) | set(world.vehicles)):
        twins = sorted(by_vehicle.get(vid, []))
        if len(twins) != 1 or vid not in world.vehicles:
            violations.append(BijectionViolation(vid, tuple(twins)))

    owner: Dict[int, int] = {}
    for tid in sorted(world.twins):
        for sample in world.twins[tid].dataset:
            first = owner.setdefault(sample.sample_id, tid)
            if first != tid:
                violations.append(DisjointnessViolation(sample.sample_id, first, tid))

    if len(world.twins) > 1:
        for tid in sorted(world.twins):
            if not [n for n in world.adjacency.get(tid, ()) if n != tid]:
                violations.append(IsolationViolation(tid))

    known = set(world.base_stations)
    for vid in sorted(world.vehicles):
        bs = world.vehicles[vid].base_station
        if bs is None or bs not in known:
            violations.append(BaseStationViolation(vid, bs))
    return violations
