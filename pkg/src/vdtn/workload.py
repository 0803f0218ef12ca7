"""World construction: cluster topologies, mobility traces, class assignment."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .model import (
    VEHICLE_CATEGORIES,
    ChannelModel,
    DataCenterConfig,
    DataSample,
    DigitalTwin,
    ResourceUnit,
    Vehicle,
    VehicleClass,
    World,
)
from .priority import PriorityWeights, compute_dt_priority

DEFAULT_MIX = (0.1, 0.2, 0.7)
REQUIRED_COLUMNS = ("vehicle_id", "angle", "x", "y", "type", "speed")
SAMPLE_TRACE = os.path.join(os.path.dirname(__file__), "data", "sample_trace.csv")


class EmptyAfterCleaning(ValueError):
    pass


@dataclass
class Topology:
    clusters: List[List[int]]
    edges: List[Tuple[int, int]]
    seed: int
    flags: List[str] = field(default_factory=list)

    @property
    def adjacency(self) -> Dict[int, List[int]]:
        adj: Dict[int, List[int]] = {t: [] for c in self.clusters for t in c}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return {t: sorted(n) for t, n in adj.items()}


def _cluster_edges(members: Sequence[int], rng: np.random.Generator, extra_p: float) -> List[Tuple[int, int]]:
    members = list(members)
    if len(members) < 2:
        return []
    order = [members[i] for i in rng.permutation(len(members))]
    edges = set()
    # random recursive tree keeps the cluster connected
    for i in range(1, len(order)):
        j = int(rng.integers(0, i))
        edges.add(tuple(sorted((order[i], order[j]))))
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            if rng.random() < extra_p:
                edges.add(tuple(sorted((members[i], members[j]))))
    return sorted(edges)


def generate_cluster_topology(num_clusters: int, per_cluster: int, seed: int,
                              extra_edge_p: float = 0.2) -> Topology:
    if num_clusters < 1 or per_cluster < 1:
        raise ValueError("need at least one cluster with at least one twin")
    rng = np.random.default_rng([seed, 0x70])
    clusters = [list(range(c * per_cluster, (c + 1) * per_cluster)) for c in range(num_clusters)]
    edges: List[Tuple[int, int]] = []
    for members in clusters:
        edges.extend(_cluster_edges(members, rng, extra_edge_p))
    flags = []
    if per_cluster == 1:
        if num_clusters == 1:
            flags.append("singleton")
        else:
            # link singleton clusters in a ring so every twin keeps a peer
            heads = [c[0] for c in clusters]
            for i in range(len(heads) - 1):
                edges.append((heads[i], heads[i + 1]))
            if len(heads) > 2:
                edges.append((heads[0], heads[-1]))
            flags.append("singleton-clusters-linked")
    return Topology(clusters, sorted(set(edges)), seed, flags)


@dataclass
class TraceRecord:
    vehicle_id: str
    angle: float
    x: float
    y: float
    vehicle_type: str
    speed: float
    extra: Dict[str, str] = field(default_factory=dict)


class Trace(list):
    """Cleaned trace records; ``dropped`` counts rejected rows."""

    def __init__(self, records=(), dropped: int = 0):
        super().__init__(records)
        self.dropped = dropped


def _parse_row(row: Dict[str, str], cols: Dict[str, str]) -> Optional[TraceRecord]:
    try:
        vid = row[cols["vehicle_id"]].strip()
        vtype = row[cols["type"]].strip()
        angle = float(row[cols["angle"]])
        x = float(row[cols["x"]])
        y = float(row[cols["y"]])
        speed = float(row[cols["speed"]])
    except (KeyError, TypeError, ValueError):
        return None
    if not vid or not vtype or speed < 0 or not np.isfinite([angle, x, y, speed]).all():
        return None
    used = set(cols.values())
    extra = {k: v for k, v in row.items() if k not in used and k is not None}
    return TraceRecord(vid, angle % 360.0, x, y, vtype, speed, extra)


def load_mobility_trace(path: str) -> Trace:
    """Read a comma-separated trace, dropping rows with missing or invalid fields."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        cols = {}
        lower = {h.strip().lower(): h for h in header}
        for name in REQUIRED_COLUMNS:
            if name not in lower:
                raise ValueError(f"{path}: missing required column {name!r}")
            cols[name] = lower[name]
        records, dropped = [], 0
        for row in reader:
            rec = _parse_row(row, cols)
            if rec is None:
                dropped += 1
            else:
                records.append(rec)
    if not records:
        raise EmptyAfterCleaning(f"{path}: no valid rows ({dropped} dropped)")
    return Trace(records, dropped)


NUMERIC_FIELDS = ("angle", "x", "y", "speed")


def standardize(records: Sequence[TraceRecord]) -> List[TraceRecord]:
    """Z-score the numeric fields using the population standard deviation."""
    if not records:
        return []
    mat = np.array([[getattr(r, f) for f in NUMERIC_FIELDS] for r in records], dtype=np.float64)
    z = kernels.standardize_columns(mat)
    return [
        replace(r, **{f: float(z[i, j]) for j, f in enumerate(NUMERIC_FIELDS)})
        for i, r in enumerate(records)
    ]


def class_counts(n: int, mix: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment of ``n`` vehicles over the class mix."""
    mix = np.asarray(mix, dtype=np.float64)
    if mix.shape != (3,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
        raise ValueError(f"class mix must be three non-negative proportions summing to 1, got {mix}")
    quotas = mix * n
    counts = np.floor(quotas + 1e-12).astype(int)
    remainder = quotas - counts
    for i in np.argsort(-remainder, kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def assign_priorities(vehicles: Sequence[Vehicle], seed: int,
                      mix: Sequence[float] = DEFAULT_MIX) -> List[Vehicle]:
    counts = class_counts(len(vehicles), mix)
    classes = np.repeat([1, 2, 3], counts)
    rng = np.random.default_rng([seed, 0xC1A55])
    classes = classes[rng.permutation(len(classes))]
    return [replace(v, vclass=VehicleClass(int(c))) for v, c in zip(vehicles, classes)]


def build_world(num_clusters: int = 10, per_cluster: int = 10, seed: int = 0,
                mix: Sequence[float] = DEFAULT_MIX,
                trace: Optional[Sequence[TraceRecord]] = None,
                samples_per_twin: int = 4,
                datacenter: Optional[DataCenterConfig] = None,
                channel: Optional[ChannelModel] = None,
                weights: Optional[PriorityWeights] = None) -> World:
    """Vehicles, twins, topology and resources for one experiment.

    Each cluster sits behind one base station. With a trace, vehicle
    positions, speeds, angles and types come from successive distinct
    vehicles in it (cycled if the trace is short).
    """
    weights = weights or PriorityWeights()
    topo = generate_cluster_topology(num_clusters, per_cluster, seed)
    rng = np.random.default_rng([seed, 0x7E4])
    n = num_clusters * per_cluster

    per_vehicle: List[TraceRecord] = []
    if trace:
        seen = set()
        for rec in trace:
            if rec.vehicle_id not in seen:
                seen.add(rec.vehicle_id)
                per_vehicle.append(rec)

    vehicles = []
    for vid in range(n):
        bs = vid // per_cluster
        if per_vehicle:
            rec = per_vehicle[vid % len(per_vehicle)]
            vehicles.append(Vehicle(vid, VehicleClass.NORMAL, (rec.x, rec.y), rec.speed,
                                    rec.angle, rec.vehicle_type, bs))
        else:
            vehicles.append(Vehicle(vid, VehicleClass.NORMAL,
                                    (float(rng.uniform(0, 1000)), float(rng.uniform(0, 1000))),
                                    float(rng.uniform(0, 30)), float(rng.uniform(0, 360)), "", bs))
    vehicles = assign_priorities(vehicles, seed, mix)
    if not per_vehicle:
        vehicles = [
            replace(v, vehicle_type=VEHICLE_CATEGORIES[v.vclass][v.id % len(VEHICLE_CATEGORIES[v.vclass])])
            for v in vehicles
        ]

    twins = {}
    sample_id = 0
    for v in vehicles:
        data = []
        for _ in range(samples_per_twin):
            data.append(DataSample(sample_id, v.id, 1))
            sample_id += 1
        twins[v.id] = DigitalTwin(v.id, v.id, v.vclass, compute_dt_priority(v.vclass, weights), data)

    return World(
        vehicles={v.id: v for v in vehicles},
        twins=twins,
        adjacency=topo.adjacency,
        clusters=topo.clusters,
        resources={t: ResourceUnit(t) for t in twins},
        base_stations=list(range(num_clusters)),
        datacenter=datacenter or DataCenterConfig(),
        channel=channel or ChannelModel(),
        flags=list(topo.flags),
    )
