"""Experiment configuration, its flat key-value file format, and seeded batch runs."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .engine import SimConfig, run, run_with_churn, service_capacity
from .metrics import Aggregate, MetricsReport, aggregate, compute_metrics
from .model import DataCenterConfig
from .priority import AgingPolicy, DominanceViolation, PriorityWeights
from .schedulers import POLICY_KINDS
from .workload import DEFAULT_MIX, build_world, load_mobility_trace

OUT_ENV = "VDTN_OUT_DIR"
DEFAULT_SIZES = (10, 20, 30)


class ConfigKeyError(ValueError):
    """A config value failed validation; ``key`` names the offending entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: Tuple[str, ...] = ("priority",)
    runs: int = 100
    seed: int = 0
    vehicles: int = 100
    clusters: int = 10
    k: int = 2
    alpha: float = 10.0
    beta: float = 1.0
    aging: bool = True
    aging_interval: int = 100
    aging_step: float = 1.0
    aging_floor: float = 11.0
    mix: Tuple[float, float, float] = DEFAULT_MIX
    datacenters: int = 2
    vms_per_datacenter: int = 10
    vm_memory: int = 1024
    vm_bandwidth: int = 1000
    host_mips: int = 1000
    horizon: int = 3000
    arrival_rate: float = SimConfig.arrival_rate
    load: Optional[float] = None  # offered load as a multiple of VM capacity; overrides arrival_rate
    churn: bool = False
    fail_twin: Tuple[Tuple[int, int], ...] = ()
    trace: str = ""
    sweep: Tuple[int, ...] = DEFAULT_SIZES
    workers: int = 1

    def __post_init__(self):
        validate(self)

    @property
    def per_cluster(self) -> int:
        return self.vehicles // self.clusters

    @property
    def weights(self) -> PriorityWeights:
        return PriorityWeights(self.alpha, self.beta)

    @property
    def aging_policy(self) -> Optional[AgingPolicy]:
        if not self.aging:
            return None
        return AgingPolicy(self.aging_interval, self.aging_step, self.aging_floor)

    @property
    def datacenter(self) -> DataCenterConfig:
        return DataCenterConfig(self.datacenters, self.vms_per_datacenter, self.vm_memory,
                                self.vm_bandwidth, self.host_mips)

    def sim_config(self) -> SimConfig:
        return SimConfig(horizon=self.horizon, k=self.k, arrival_rate=self.arrival_rate,
                         weights=self.weights, aging=self.aging_policy,
                         failures=self.fail_twin, churn=self.churn)


def validate(cfg: ExperimentConfig) -> None:
    for key in ("runs", "vehicles", "clusters", "datacenters", "vms_per_datacenter",
                "vm_memory", "vm_bandwidth", "host_mips", "horizon", "aging_interval", "workers"):
        if getattr(cfg, key) < 1:
            raise ConfigKeyError(_flag(key), f"must be >= 1, got {getattr(cfg, key)}")
    if cfg.k < 0:
        raise ConfigKeyError("k", f"must be >= 0, got {cfg.k}")
    if cfg.vehicles % cfg.clusters:
        raise ConfigKeyError("vehicles", f"{cfg.vehicles} does not split evenly over {cfg.clusters} clusters")
    try:
        PriorityWeights(cfg.alpha, cfg.beta)
    except DominanceViolation as exc:
        raise ConfigKeyError("alpha", str(exc)) from exc
    if cfg.aging_step <= 0 or cfg.aging_floor <= 0:
        raise ConfigKeyError("aging-step", "aging step and floor must be positive")
    if len(cfg.mix) != 3 or min(cfg.mix) < 0 or abs(sum(cfg.mix) - 1.0) > 1e-9:
        raise ConfigKeyError("mix", f"needs three non-negative proportions summing to 1, got {cfg.mix}")
    if cfg.arrival_rate < 0:
        raise ConfigKeyError("arrival-rate", "must be >= 0")
    if cfg.load is not None and cfg.load <= 0:
        raise ConfigKeyError("load", "must be positive")
    if not cfg.algorithm:
        raise ConfigKeyError("algorithm", "no policy given")
    for name in cfg.algorithm:
        if name not in POLICY_KINDS:
            raise ConfigKeyError("algorithm", f"unknown policy {name!r}; expected one of {POLICY_KINDS}")
    for twin, tick in cfg.fail_twin:
        if not 0 <= twin < cfg.vehicles:
            raise ConfigKeyError("fail-twin", f"twin {twin} does not exist")
        if not 0 <= tick <= cfg.horizon:
            raise ConfigKeyError("fail-twin", f"tick {tick} outside the horizon")
    if not cfg.sweep or min(cfg.sweep) < 1:
        raise ConfigKeyError("sweep", "sizes must be positive vehicle counts")
    for size in cfg.sweep:
        if size % cfg.per_cluster:
            raise ConfigKeyError("sweep", f"size {size} is not a multiple of {cfg.per_cluster} vehicles per cluster")


# --- flat key-value format ----------------------------------------------------------


def _flag(name: str) -> str:
    return name.replace("_", "-")


def _render(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{a}@{b}" for a, b in value)
        return ",".join(_render(v) for v in value)
    return str(value)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _parse_failures(text: str) -> Tuple[Tuple[int, int], ...]:
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        twin, sep, tick = part.partition("@")
        if not sep:
            raise ValueError(f"expected twin@tick, got {part!r}")
        out.append((int(twin), int(tick)))
    return tuple(out)


def _split(text: str) -> List[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


_PARSERS = {
    "algorithm": lambda s: tuple(_split(s)),
    "mix": lambda s: tuple(float(p) for p in _split(s)),
    "sweep": lambda s: tuple(int(p) for p in _split(s)),
    "fail_twin": _parse_failures,
    "load": lambda s: None if s.strip().lower() == "none" else float(s),
    "trace": str.strip,
}


def parse_value(key: str, text: str):
    """Convert one textual value for ``key``; malformed input raises ConfigKeyError."""
    names = {f.name: f for f in fields(ExperimentConfig)}
    if key not in names:
        raise ConfigKeyError(_flag(key), "unknown key")
    try:
        if key in _PARSERS:
            return _PARSERS[key](text)
        default = names[key].default
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError as exc:
        raise ConfigKeyError(_flag(key), f"bad value {text!r} ({exc})") from exc


def emit_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{_flag(f.name)} = {_render(getattr(cfg, f.name))}\n" for f in fields(cfg))


def read_config_text(text: str) -> Dict[str, object]:
    """Parse the flat format into overrides; ``#`` starts a comment."""
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigKeyError(f"line {lineno}", f"expected key = value, got {raw!r}")
        name = key.strip().replace("-", "_")
        values[name] = parse_value(name, value.strip())
    return values


def build_config(file_values: Optional[Dict[str, object]] = None,
                 overrides: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigKeyError("config", str(exc)) from exc


def default_out_dir() -> str:
    return os.environ.get(OUT_ENV, "vdtn-out")


# --- batch runs ---------------------------------------------------------------


@dataclass
class RunResult:
    index: int
    seed: int
    report: MetricsReport
    log_text: str
    churn_log_text: Optional[str] = None


def _world(cfg: ExperimentConfig, clusters: int, seed: int):
    trace = load_mobility_trace(cfg.trace) if cfg.trace else None
    return build_world(num_clusters=clusters, per_cluster=cfg.per_cluster, seed=seed,
                       mix=cfg.mix, trace=trace, datacenter=cfg.datacenter)


def _rate(cfg: ExperimentConfig, seed: int) -> float:
    """Per-vehicle arrival rate; with ``load`` it is sized on the full configured world."""
    if cfg.load is None:
        return cfg.arrival_rate
    world = _world(cfg, cfg.clusters, seed)
    sim = cfg.sim_config()
    return cfg.load * service_capacity(world, sim) / (len(world.vehicles) * max(sim.k, 1))


def _one_run(args) -> RunResult:
    cfg, policy, clusters, index = args
    seed = cfg.seed + index
    world = _world(cfg, clusters, seed)
    sim = replace(cfg.sim_config(), arrival_rate=_rate(cfg, seed))
    if cfg.churn:
        log, churn_log = run_with_churn(world, policy, replace(sim, churn=False), seed)
        return RunResult(index, seed, compute_metrics(log, churn_log), log.dumps(), churn_log.dumps())
    log = run(world, policy, sim, seed)
    return RunResult(index, seed, compute_metrics(log), log.dumps())


def run_batch(cfg: ExperimentConfig, policy: str, clusters: Optional[int] = None) -> List[RunResult]:
    """``runs`` seeded simulations (seed, seed+1, ...), in index order whatever the worker count."""
    jobs = [(cfg, policy, clusters or cfg.clusters, i) for i in range(cfg.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_one_run, jobs))
    return [_one_run(j) for j in jobs]


def run_experiment(cfg: ExperimentConfig, policy: str) -> Tuple[Aggregate, List[RunResult]]:
    results = run_batch(cfg, policy)
    return aggregate([r.report for r in results]), results


def scalability_sweep(sizes: Sequence[int], policies: Sequence[str], cfg: ExperimentConfig,
                      on_batch: Optional[Callable[[str, int, List[RunResult]], None]] = None,
                      ) -> Dict[Tuple[str, int], Aggregate]:
    """Aggregate per (policy, size); the per-vehicle arrival rate is held fixed across sizes.

    ``on_batch`` sees each batch's run results, logs included, before they are dropped.
    """
    if not sizes:
        raise ValueError("sizes must be non-empty")
    out: Dict[Tuple[str, int], Aggregate] = {}
    for policy in policies:
        for size in sizes:
            if size % cfg.per_cluster:
                raise ConfigKeyError("sweep", f"size {size} is not a multiple of {cfg.per_cluster}")
            results = run_batch(cfg, policy, clusters=size // cfg.per_cluster)
            if on_batch is not None:
                on_batch(policy, size, results)
            out[(policy, size)] = aggregate([r.report for r in results])
    return out
