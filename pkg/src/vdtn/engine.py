"""Deterministic discrete-event engine for the two-layer twin network.

Each task follows the intra-twin round: the vehicle uploads its private
data over its base station's channel, the twin runs ``k`` inter-twin
updates (each one acquires resources and a VM through the active policy),
and the processed result is downloaded over the same channel.

Time is in integer ticks (1 tick = 1 ms). Events are ordered by
``(time, seq)`` where ``seq`` is the insertion counter.
"""

from __future__ import annotations

import copy
import heapq
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .model import (
    AppClass,
    ResourceUnit,
    Task,
    TaskState,
    World,
    validate_world,
)
from .priority import AgingPolicy, PriorityWeights, task_priority
from .schedulers import Action, OpCounter, make_policy
from .workload import generate_cluster_topology

# Event kinds that drive the loop.
UPLOAD = "Upload"
TWIN_RECEIVE = "TwinReceive"
RESOURCE_GRANTED = "ResourceGranted"
EXCHANGE_START = "ExchangeStart"
EXCHANGE_DONE = "ExchangeDone"
RESULT_DOWNLOAD = "ResultDownload"
VM_COMPLETE = "VmComplete"
TWIN_FAIL = "TwinFail"
AGING_TICK = "AgingTick"
RETRY = "Retry"
STALL_RELEASE = "StallRelease"
CHURN = "Churn"
UNBLOCK = "Unblock"
# Record-only kinds.
WAIT = "Wait"
VM_ASSIGN = "VmAssign"
TASK_FAILED = "TaskFailed"

DEFAULT_APP_PAYLOAD = (2, 3, 4, 6, 8)


class ConfigError(ValueError):
    pass


class UnknownTwin(KeyError):
    pass


class CorruptLog(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class SimConfig:
    horizon: int = 3000
    k: int = 2
    arrival_rate: float = 0.0054  # tasks per vehicle per tick, about half the default VM capacity
    inject_until: Optional[int] = None  # defaults to horizon
    app_mix: Tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    app_payload: Tuple[int, ...] = DEFAULT_APP_PAYLOAD
    max_resources: int = 3
    exchange_overhead: int = 1
    mi_per_unit: float = 1.0
    retry_interval: int = 2
    weights: PriorityWeights = field(default_factory=PriorityWeights)
    aging: Optional[AgingPolicy] = field(default_factory=AgingPolicy)
    stall: Optional[int] = None  # None: a failed twin never releases
    failures: Tuple[Tuple[int, int], ...] = ()
    churn: bool = False
    churn_resync: int = 40
    instrument: bool = True

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.k < 0:
            raise ConfigError("k must be >= 0")
        if self.arrival_rate < 0:
            raise ConfigError("arrival_rate must be >= 0")
        if len(self.app_mix) != 5 or abs(sum(self.app_mix) - 1.0) > 1e-9:
            raise ConfigError("app_mix needs five proportions summing to 1")
        if len(self.app_payload) != 5 or min(self.app_payload) < 1:
            raise ConfigError("app_payload needs five positive sizes")
        if self.max_resources < 1 or self.retry_interval < 1 or self.exchange_overhead < 0:
            raise ConfigError("max_resources and retry_interval must be >= 1")


@dataclass(frozen=True)
class ProcessedInfo:
    task_id: int
    content_version: int
    final: bool = True


@dataclass
class VirtualMachine:
    id: int
    datacenter_id: int
    mips: int
    memory: int
    busy_until: Optional[int] = None


class _TaskRun:
    __slots__ = ("task", "spec", "upload", "first_response", "version", "vm",
                 "blocked_on", "affected", "finished")

    def __init__(self, task: Task, spec: tuple, upload: int):
        self.task = task
        self.spec = spec
        self.upload = upload
        self.first_response: Optional[int] = None
        self.version = 0
        self.vm: Optional[int] = None
        self.blocked_on: Optional[int] = None
        self.affected = False
        self.finished = False


@dataclass
class RunLog:
    meta: dict
    events: List[dict]
    end: dict

    def to_lines(self) -> List[str]:
        dump = lambda obj: json.dumps(obj, sort_keys=True, separators=(",", ":"))
        return [dump({"meta": self.meta})] + [dump(e) for e in self.events] + [dump({"end": self.end})]

    def dumps(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    def dump(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    def event_lines(self) -> List[str]:
        return self.to_lines()[1:-1]

    @classmethod
    def loads(cls, text: str) -> "RunLog":
        lines = text.splitlines()
        if not lines:
            raise CorruptLog(1, "empty log")
        meta, events, end = None, [], None
        for i, line in enumerate(lines, start=1):
            if end is not None:
                raise CorruptLog(i, "content after end record")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptLog(i, f"unparseable record ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorruptLog(i, "record is not an object")
            if i == 1:
                if "meta" not in obj:
                    raise CorruptLog(i, "missing meta header")
                meta = obj["meta"]
            elif "end" in obj:
                end = obj["end"]
            elif "kind" in obj and "t" in obj and "seq" in obj:
                events.append(obj)
            else:
                raise CorruptLog(i, "record lacks t/seq/kind")
        if end is None:
            raise CorruptLog(len(lines) + 1, "log truncated: no end record")
        return cls(meta, events, end)

    @classmethod
    def load(cls, path: str) -> "RunLog":
        with open(path) as fh:
            return cls.loads(fh.read())

    def of_kind(self, *kinds: str) -> Iterable[dict]:
        return (e for e in self.events if e["kind"] in kinds)


def _service_ticks(payload: int, nres: int, config: SimConfig, mips: int) -> int:
    mi_per_tick = mips / 1000.0
    return config.exchange_overhead + max(1, math.ceil(payload * nres * config.mi_per_unit / mi_per_tick))


def mean_resources(world: World, config: SimConfig) -> float:
    vals = []
    for tid in world.twins:
        deg = len(world.adjacency.get(tid, ()))
        m = min(max(deg, 1), config.max_resources)
        vals.append((m + 1) / 2.0)
    return float(np.mean(vals))


def mean_service(world: World, config: SimConfig) -> float:
    """Expected exchange service time in ticks (ceil ignored for whole-tick work)."""
    nres = mean_resources(world, config)
    payload = float(np.dot(config.app_mix, config.app_payload))
    mi_per_tick = world.datacenter.host_mips / 1000.0
    return config.exchange_overhead + payload * nres * config.mi_per_unit / mi_per_tick


def service_capacity(world: World, config: SimConfig) -> float:
    """Updates per tick the VM pool can serve."""
    return world.datacenter.num_vms / mean_service(world, config)


def injection_rate(world: World, config: SimConfig) -> float:
    """Updates per tick offered by the workload."""
    return len(world.vehicles) * config.arrival_rate * max(config.k, 1)


def congested(world: World, config: SimConfig, factor: float = 1.25) -> SimConfig:
    """Copy of ``config`` whose arrival rate offers ``factor`` x the VM capacity."""
    from dataclasses import replace

    rate = factor * service_capacity(world, config) / (len(world.vehicles) * max(config.k, 1))
    return replace(config, arrival_rate=rate)


def generate_arrivals(world: World, config: SimConfig, seed: int) -> List[tuple]:
    """Per-vehicle Poisson arrivals: ``(time, vehicle, app, payload, draws)`` sorted by time."""
    rng = np.random.default_rng([seed, 1])
    until = config.horizon if config.inject_until is None else config.inject_until
    out = []
    for vid in sorted(world.vehicles):
        n = int(rng.poisson(config.arrival_rate * until))
        times = np.sort(rng.integers(0, max(until, 1), size=n))
        apps = rng.choice(5, size=n, p=np.asarray(config.app_mix))
        draws = rng.random((n, config.max_resources + 1))
        for t, a, d in zip(times, apps, draws):
            app = AppClass(int(a) + 1)
            out.append((int(t), vid, app, config.app_payload[int(a)], tuple(float(x) for x in d)))
    out.sort(key=lambda r: (r[0], r[1]))
    return out


def choose_resources(twin_id: int, adjacency: Dict[int, List[int]], draws: tuple, max_resources: int) -> Tuple[int, ...]:
    peers = [p for p in adjacency.get(twin_id, ()) if p != twin_id]
    if not peers:
        return (twin_id,)
    m = min(len(peers), max_resources)
    nres = 1 + int(draws[0] * m)
    pool = list(peers)
    chosen = []
    for u in draws[1:1 + nres]:
        chosen.append(pool.pop(int(u * len(pool))))
    return tuple(sorted(chosen))


class Simulation:
    """One seeded run. ``arrivals`` replaces the generated Poisson workload when given."""

    def __init__(self, world: World, policy: str, config: SimConfig, seed: int,
                 arrivals: Optional[List[tuple]] = None):
        if world.datacenter.num_vms < 1:
            raise ConfigError("empty VM set")
        problems = validate_world(world)
        if problems:
            raise ConfigError(f"world fails structural checks: {problems[:3]}")
        self.world = world
        self.config = config
        self.seed = seed
        dc = world.datacenter
        self.vms = [
            VirtualMachine(i, i // dc.vms_per_datacenter, dc.host_mips, dc.vm_memory)
            for i in range(dc.num_vms)
        ]
        self.resources = {rid: ResourceUnit(rid) for rid in world.resources}
        self.counter = OpCounter(enabled=config.instrument)
        self.policy = make_policy(policy, self.resources, len(self.vms), config.aging, self.counter)
        self.adjacency = {t: list(n) for t, n in world.adjacency.items()}
        self.channel_free = {bs: 0 for bs in world.base_stations}
        self.runs: Dict[int, _TaskRun] = {}
        self.failed_twins: set = set()
        self.stalled: set = set()
        self.dead_tasks: set = set()  # failed tasks whose locks stay stalled
        self.arrivals = arrivals
        self.events: List[dict] = []
        self._heap: list = []
        self._seq = 0
        self._log_seq = 0
        self.now = 0
        self._on_fork = None  # called with self when the churn instant is reached

    # --- plumbing -------------------------------------------------------

    def _push(self, time: int, kind: str, payload: tuple = ()) -> None:
        heapq.heappush(self._heap, (time, self._seq, kind, payload))
        self._seq += 1

    def _log(self, kind: str, **fields) -> None:
        self.events.append({"t": self.now, "seq": self._log_seq, "kind": kind, **fields})
        self._log_seq += 1

    # --- lifecycle ------------------------------------------------------

    def run(self) -> RunLog:
        self._setup()
        return self._finish()

    def _setup(self) -> None:
        cfg = self.config
        arrivals = self.arrivals
        if arrivals is None:
            arrivals = generate_arrivals(self.world, cfg, self.seed)
        if self.policy.resource_first:
            # same-tick uploads enter in priority order; stable otherwise
            twins = self.world.twins
            arrivals = sorted(arrivals, key=lambda a: (a[0], task_priority(twins[a[1]].vclass, a[2], cfg.weights)))
        for i, (t, vid, app, payload, draws) in enumerate(arrivals):
            self._push(t, UPLOAD, (i, vid, app, payload, draws))
        for twin, at in cfg.failures:
            self.inject_failure(twin, at)
        if self.policy.kind == "priority" and cfg.aging is not None:
            self._push(cfg.aging.interval, AGING_TICK)
        # always scheduled so runs with and without churn share event sequence numbers
        self._push(cfg.horizon // 2, CHURN)

    def _finish(self) -> RunLog:
        cfg = self.config
        handlers = {
            UPLOAD: self._on_upload,
            TWIN_RECEIVE: self._on_twin_receive,
            EXCHANGE_DONE: self._on_exchange_done,
            RESULT_DOWNLOAD: self._on_download,
            RETRY: self._on_retry,
            TWIN_FAIL: self._on_twin_fail,
            STALL_RELEASE: self._on_stall_release,
            AGING_TICK: self._on_aging,
            CHURN: self._on_churn,
            UNBLOCK: self._on_unblock,
        }
        heap, horizon = self._heap, cfg.horizon
        while heap and heap[0][0] <= horizon:
            time, _, kind, payload = heapq.heappop(heap)
            self.now = time
            handlers[kind](*payload)
        end_time = horizon if heap else self.now
        self.now = end_time
        self._fail_stalled_at_end()
        return RunLog(self._meta(), self.events, {
            "end_time": end_time,
            "ops": self.counter.ops,
            "decisions": self.counter.decisions,
        })

    def _meta(self) -> dict:
        cfg, world = self.config, self.world
        return {
            "policy": self.policy.kind,
            "seed": self.seed,
            "k": cfg.k,
            "horizon": cfg.horizon,
            "num_vms": len(self.vms),
            "base_stations": list(world.base_stations),
            "transit_rate": world.channel.transit_rate,
            "channel_window": world.channel.horizon,
            "churn": cfg.churn,
            "failures": [list(f) for f in cfg.failures],
        }

    def inject_failure(self, twin_id: int, time: int) -> None:
        if twin_id not in self.world.twins:
            raise UnknownTwin(twin_id)
        if not 0 <= time <= self.config.horizon:
            raise ConfigError(f"failure time {time} outside horizon")
        self._push(time, TWIN_FAIL, (twin_id,))

    # --- intra-twin round -------------------------------------------------

    def _on_upload(self, idx, vid, app, payload, draws) -> None:
        twin = self.world.twins[vid]
        required = choose_resources(twin.id, self.adjacency, draws, self.config.max_resources)
        task = Task(
            id=idx, twin_id=twin.id, vclass=twin.vclass, app=app,
            required_resources=required, enqueue_time=self.now,
            base_priority=task_priority(twin.vclass, app, self.config.weights),
            payload_size=payload,
        )
        run = self.runs[idx] = _TaskRun(task, draws, self.now)
        self._log(UPLOAD, task=idx, twin=twin.id, cls=int(twin.vclass), app=int(app),
                  size=payload, res=list(required), msg=1)
        if twin.id in self.failed_twins:
            self._fail(run, "injection")
            return
        bs = self.world.vehicles[vid].base_station
        start = max(self.now, self.channel_free[bs])
        end = start + self.world.channel.transfer_ticks(payload)
        self.channel_free[bs] = end
        self._push(end, TWIN_RECEIVE, (idx, bs, start))

    def _on_twin_receive(self, idx, bs, tx_start) -> None:
        run = self.runs[idx]
        if run.finished:
            return
        self._log(TWIN_RECEIVE, task=idx, bs=bs, tx=tx_start, size=run.task.payload_size)
        if self.config.k == 0:
            self._download(run)
        else:
            self._begin_update(run)

    def _download(self, run: _TaskRun) -> None:
        bs = self.world.vehicles[self.world.twins[run.task.twin_id].vehicle_id].base_station
        start = max(self.now, self.channel_free[bs])
        end = start + self.world.channel.transfer_ticks(run.task.payload_size)
        self.channel_free[bs] = end
        self._push(end, RESULT_DOWNLOAD, (run.task.id, bs, start))

    def _on_download(self, idx, bs, tx_start) -> None:
        run = self.runs[idx]
        if run.finished:
            return
        run.finished = True
        run.task.state = TaskState.DONE
        if run.first_response is None:
            run.first_response = self.now
        self._log(RESULT_DOWNLOAD, task=idx, bs=bs, tx=tx_start, size=run.task.payload_size,
                  version=run.version, first=run.first_response, affected=run.affected, msg=1)

    def intra_twin_round(self, run: _TaskRun) -> Optional[ProcessedInfo]:
        if run.task.state is not TaskState.DONE:
            return None
        return ProcessedInfo(run.task.id, run.version, True)

    # --- inter-twin updates -------------------------------------------------

    def _note_grant(self, run: _TaskRun, rid: int, reason: str, notified: bool) -> None:
        if run.first_response is None:
            run.first_response = self.now
        run.task.state = TaskState.GRANTED
        self._log(RESOURCE_GRANTED, task=run.task.id, res=rid, why=reason, msg=1 if notified else 0)

    def _begin_update(self, run: _TaskRun) -> None:
        run.task.state = TaskState.QUEUED
        if self.policy.resource_first:
            self._priority_request(run)
        else:
            for task, vm in self.policy.submit(run.task, self.now):
                self._occupy(self.runs[task.id], vm)

    def _priority_request(self, run: _TaskRun) -> None:
        starts = []
        for d in self.policy.request(run.task, self.now):
            if d.action is Action.WAIT:
                run.blocked_on = d.target
                if self._blocked_by_failure(d.target, int(run.task.vclass)):
                    run.affected = True
                self._log(WAIT, task=run.task.id, res=d.target, why=d.reason.value)
            else:
                self._note_grant(run, d.target, d.reason.value, False)
        if self.policy.has_all(run.task):
            run.blocked_on = None
            starts = self.policy.enqueue_ready(run.task, self.now)
        self._start_all(starts)

    def _handle_grants(self, grants) -> None:
        for g in grants:
            run = self.runs[g.task_id]
            self._note_grant(run, g.target, g.reason.value, True)
            self._priority_request(run)

    def _start_all(self, starts) -> None:
        for task, vm in starts:
            run = self.runs[task.id]
            if self.policy.resource_first:
                run.vm = vm
                self._start_exchange(run, vm, dispatch_msg=True)
            else:
                self._occupy(run, vm)

    def _occupy(self, run: _TaskRun, vm: int) -> None:
        run.vm = vm
        self._log(VM_ASSIGN, task=run.task.id, vm=vm, msg=1)
        self._try_lock(run)

    def _try_lock(self, run: _TaskRun) -> None:
        task = run.task
        before = self.policy.progress(task.id)
        blocking = self.policy.try_acquire(task, self.now)
        after = self.policy.progress(task.id)
        for rid in task.required_resources[before:after]:
            self._note_grant(run, rid, "Free", False)
        if blocking is None:
            run.blocked_on = None
            self._start_exchange(run, run.vm, dispatch_msg=False)
            return
        run.blocked_on = blocking
        if self._blocked_by_failure(blocking, 0):
            run.affected = True
        self._log(RETRY, task=task.id, vm=run.vm, res=blocking, msg=2)
        self._push(self.now + self.config.retry_interval, RETRY, (task.id,))

    def _on_retry(self, idx) -> None:
        run = self.runs[idx]
        if not run.finished:
            self._try_lock(run)

    def _start_exchange(self, run: _TaskRun, vm: int, dispatch_msg: bool) -> None:
        task = run.task
        task.state = TaskState.EXCHANGING
        service = _service_ticks(task.payload_size, len(task.required_resources), self.config, self.vms[vm].mips)
        self.vms[vm].busy_until = self.now + service
        self._log(EXCHANGE_START, task=task.id, vm=vm, msg=1 if dispatch_msg else 0)
        self._push(self.now + service, EXCHANGE_DONE, (task.id, vm, self.now))

    def _on_exchange_done(self, idx, vm, start) -> None:
        run = self.runs[idx]
        if run.finished:
            return
        task = run.task
        run.version += 1
        self._log(EXCHANGE_DONE, task=idx, vm=vm, start=start, version=run.version,
                  msg=2 * len(task.required_resources))
        grants = self.policy.release(task, self.now)
        self._release_vm(vm)
        run.vm = None
        if grants:
            self._handle_grants(grants)
        if run.version < self.config.k:
            self._begin_update(run)
        else:
            self._download(run)

    def _release_vm(self, vm: int) -> None:
        self.vms[vm].busy_until = None
        self._log(VM_COMPLETE, vm=vm)
        self._start_all(self.policy.vm_free(vm, self.now))

    # --- failures, aging, churn ------------------------------------------------

    def _blocked_by_failure(self, rid: int, rank: int) -> bool:
        """Whether a failed task's stalled lock gates ``rank`` out of ``rid``.

        Rank 0 stands for the priority-unaware balancers' exclusive lock.
        """
        if rid not in self.stalled:
            return False
        return any(h in self.dead_tasks for r, h in self.resources[rid].holders.items() if r <= rank)

    def _fail(self, run: _TaskRun, cause: str) -> None:
        run.finished = True
        run.task.state = TaskState.FAILED
        self._log(TASK_FAILED, task=run.task.id, cause=cause)

    def _on_twin_fail(self, twin_id) -> None:
        self.failed_twins.add(twin_id)
        self._log(TWIN_FAIL, twin=twin_id)
        victims = [r for r in self.runs.values() if r.task.twin_id == twin_id and not r.finished]
        for run in victims:
            self.policy.cancel(run.task)
            held = [rid for rid in run.task.required_resources
                    if self.resources[rid].held_by(run.task.id)]
            self.stalled.update(held)
            if held:
                self.dead_tasks.add(run.task.id)
            self._fail(run, "injection")
            if run.vm is not None:
                vm, run.vm = run.vm, None
                self._release_vm(vm)
            if held and self.config.stall is not None:
                self._push(self.now + self.config.stall, STALL_RELEASE, (run.task.id,))

    def _on_stall_release(self, idx) -> None:
        task = self.runs[idx].task
        self.dead_tasks.discard(idx)
        for rid in task.required_resources:
            if not any(h in self.dead_tasks for h in self.resources[rid].holders.values() if h != idx):
                self.stalled.discard(rid)
        self._handle_grants(self.policy.release(task, self.now))

    def _fail_stalled_at_end(self) -> None:
        for idx in sorted(self.runs):
            run = self.runs[idx]
            if run.finished or run.blocked_on is None:
                continue
            rank = int(run.task.vclass) if self.policy.resource_first else 0
            if self._blocked_by_failure(run.blocked_on, rank):
                self._fail(run, "stalled")

    def _on_aging(self) -> None:
        self.policy.on_aging(self.now)
        self._log(AGING_TICK)
        if self._heap:
            self._push(self.now + self.config.aging.interval, AGING_TICK)

    def _on_churn(self) -> None:
        if self._on_fork is not None:
            self._on_fork(self)
        if not self.config.churn:
            return
        topo = generate_cluster_topology(len(self.world.clusters), len(self.world.clusters[0]),
                                         self.seed * 7919 + 104729)
        self.adjacency = topo.adjacency
        until = self.now + self.config.churn_resync
        for res in self.resources.values():
            res.blocked_until = until
        self._log(CHURN, until=until)
        self._push(until, UNBLOCK)

    def _on_unblock(self) -> None:
        self._log(UNBLOCK)
        if self.policy.resource_first:
            for rid in sorted(self.resources):
                self._handle_grants(self.policy.wake(rid, self.now))


def run(world: World, policy: str, config: SimConfig, seed: int) -> RunLog:
    """Simulate one seeded run of ``policy`` over ``world``."""
    return Simulation(world, policy, config, seed).run()


def run_with_churn(world: World, policy: str, config: SimConfig, seed: int) -> Tuple[RunLog, RunLog]:
    """The run without churn and the run with churn, sharing the common first half.

    Both logs equal what two independent :func:`run` calls would give.
    """
    base = Simulation(world, policy, replace(config, churn=False), seed)
    forks: List[Simulation] = []

    def fork(sim: Simulation) -> None:
        # logged events are never mutated, so the copy can share them
        memo = {id(sim.events): list(sim.events), id(sim.world): sim.world}
        for entry in sim._heap:
            if entry[2] == UPLOAD:  # pending arrivals hold only immutable values
                memo[id(entry)] = entry
        twin = copy.deepcopy(sim, memo)
        twin.config = replace(config, churn=True)
        twin._on_fork = None
        forks.append(twin)

    base._on_fork = fork
    base._setup()
    log = base._finish()
    if not forks:  # horizon too short to reach the churn instant
        return log, run(world, policy, replace(config, churn=True), seed)
    churned = forks[0]
    churned._on_churn()
    return log, churned._finish()
