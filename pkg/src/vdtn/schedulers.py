"""Contention policies: class-gated priority acquisition and two VM load balancers.

The priority policy acquires every resource an update needs (ordered by
resource id, partial grants held) before asking for a VM from a global
ready queue. The balancers are priority-unaware: they place the update on
a VM first, and the VM then takes exclusive locks on the resources.

All policies report abstract operation counts to an :class:`OpCounter`
with one accounting: a table probe or write, a cursor step and a FIFO
insert/remove cost 1; a heap insert/remove costs 1 plus its depth.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Dict, Iterable, List, Optional, Tuple

import numpy as np

from . import kernels
from .model import ResourceUnit, Task
from .priority import AgingPolicy, sort_key

_VECTOR_REKEY = 64  # queues at least this long are re-keyed with the array kernel

POLICY_KINDS = ("priority", "rr", "throttled")


class UnknownResource(KeyError):
    pass


class Action(str, Enum):
    GRANT = "Grant"
    WAIT = "Wait"
    EXCHANGE_DIRECT = "ExchangeDirect"


class Reason(str, Enum):
    FREE = "Free"
    APP_PRIORITY = "AppPriorityWin"
    FCFS = "FCFSWin"
    QUEUED = "Queued"


@dataclass(frozen=True)
class GrantDecision:
    task_id: int
    target: int  # resource id or VM id
    action: Action
    reason: Reason


class OpCounter:
    """Abstract scheduler operations and the number of placement decisions."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.ops = 0
        self.decisions = 0

    def add(self, n: int = 1) -> None:
        if self.enabled:
            self.ops += n

    def heap_op(self, size: int) -> None:
        # one insert/remove plus a comparison per heap level
        if self.enabled:
            self.ops += 1 + max(size, 1).bit_length()

    def decision(self) -> None:
        if self.enabled:
            self.decisions += 1


class ContentionQueue:
    """Min-heap of tasks keyed by ``(effective priority, enqueue time, id)``.

    Keys are computed at push time and refreshed by :meth:`reage`, so the
    order tracks aging at the granularity of the reage calls. Per-class
    counts let a caller tell in O(1) whether any waiter could pass a gate.
    """

    def __init__(self, aging: Optional[AgingPolicy] = None, counter: Optional[OpCounter] = None):
        self.aging = aging
        self.counter = counter or OpCounter(enabled=False)
        self._heap: List[Tuple[Tuple[float, int, int], Task]] = []
        self._per_rank = [0, 0, 0, 0]
        self._keyed_at = 0

    def _key(self, task: Task, now: int) -> Tuple[float, int, int]:
        return sort_key(task, max(now, task.enqueue_time), self.aging)

    def min_rank(self) -> int:
        """Most important vehicle class rank present, or 4 when empty."""
        for rank in (1, 2, 3):
            if self._per_rank[rank]:
                return rank
        return 4

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def __contains__(self, task_id: int) -> bool:
        return any(t.id == task_id for _, t in self._heap)

    def tasks(self) -> List[Task]:
        return [t for _, t in sorted(self._heap, key=lambda e: e[0])]

    def push(self, task: Task, now: int) -> None:
        self.counter.heap_op(len(self._heap))
        heapq.heappush(self._heap, (self._key(task, now), task))
        self._per_rank[int(task.vclass)] += 1

    def pop(self) -> Task:
        self.counter.heap_op(len(self._heap))
        task = heapq.heappop(self._heap)[1]
        self._per_rank[int(task.vclass)] -= 1
        return task

    def peek(self) -> Task:
        return self._heap[0][1]

    def remove(self, task_id: int) -> bool:
        kept = [e for e in self._heap if e[1].id != task_id]
        if len(kept) == len(self._heap):
            return False
        self.counter.add(len(self._heap))
        gone = next(e[1] for e in self._heap if e[1].id == task_id)
        self._per_rank[int(gone.vclass)] -= 1
        self._heap = kept
        heapq.heapify(self._heap)
        return True

    def reage(self, now: int) -> None:
        self._keyed_at = max(self._keyed_at, now)
        if self.aging is None or not self._heap:
            return
        self.counter.add(len(self._heap))
        tasks = [t for _, t in self._heap]
        if len(tasks) < _VECTOR_REKEY:
            self._heap = [(self._key(t, now), t) for t in tasks]
        else:
            a = self.aging
            enq = np.fromiter((t.enqueue_time for t in tasks), np.int64, len(tasks))
            base = np.fromiter((t.base_priority for t in tasks), np.float64, len(tasks))
            # a task enqueued after ``now`` is keyed at its own enqueue time (no wait yet)
            eff = kernels.effective_priorities(base, np.minimum(enq, now), now, a.interval, a.step, a.floor)
            self._heap = [((e, t.enqueue_time, t.id), t) for e, t in zip(eff.tolist(), tasks)]
        heapq.heapify(self._heap)

    def refresh(self, epoch: int) -> None:
        """Re-key only if the last aging tick ``epoch`` is newer than the keys."""
        if epoch > self._keyed_at:
            self.reage(epoch)


def pop_order_oracle(queue: Iterable[Task], now: int, aging: Optional[AgingPolicy]) -> List[Task]:
    """Full sort of ``queue`` by the scheduling order, computed in one shot."""
    tasks = list(queue)
    if not tasks:
        return []
    base = np.array([t.base_priority for t in tasks], dtype=np.float64)
    enq = np.array([t.enqueue_time for t in tasks], dtype=np.int64)
    ids = np.array([t.id for t in tasks], dtype=np.int64)
    if aging is None:
        eff = base
    else:
        eff = kernels.effective_priorities(base, enq, now, aging.interval, aging.step, aging.floor)
    return [tasks[i] for i in kernels.priority_order(eff, enq, ids)]


def _grantable(resource: ResourceUnit, rank: int, now: int) -> bool:
    if now < resource.blocked_until:
        return False
    return not resource.holders or min(resource.holders) > rank


class PriorityVDTN:
    """Class-gated resource acquisition with app-priority / FCFS queues and aging.

    A task may use a resource unless a task of its own or a more important
    class already holds it. Waiters queue per resource in scheduling order;
    the reason records whether they wait on a same-class holder (app
    priority decides) or behind a more important class (FCFS behind it).
    """

    kind = "priority"
    resource_first = True

    def __init__(self, resources: Dict[int, ResourceUnit], num_vms: int,
                 aging: Optional[AgingPolicy] = None, counter: Optional[OpCounter] = None):
        if num_vms < 1:
            raise ValueError("need at least one VM")
        self.resources = resources
        self.aging = aging
        self.counter = counter or OpCounter()
        self.queues: Dict[int, ContentionQueue] = {}
        self.ready = ContentionQueue(aging, self.counter)
        # free list used as a stack; VM 0 is handed out first
        self.free_vms: List[int] = list(range(num_vms - 1, -1, -1))
        self.num_vms = num_vms
        self._next: Dict[int, int] = {}  # task id -> index of next resource to acquire
        self._waiting_on: Dict[int, Tuple[int, Reason]] = {}
        self._tasks: Dict[int, Task] = {}
        self._aged_at = 0  # last aging tick; queues re-key lazily up to it

    def _queue(self, rid: int) -> ContentionQueue:
        q = self.queues.get(rid)
        if q is None:
            q = self.queues[rid] = ContentionQueue(self.aging, self.counter)
            q._keyed_at = self._aged_at
        return q

    def has_all(self, task: Task) -> bool:
        return self._next.get(task.id, 0) >= len(task.required_resources)

    def waiting_on(self, task_id: int) -> Optional[int]:
        entry = self._waiting_on.get(task_id)
        return entry[0] if entry else None

    def request(self, task: Task, now: int) -> List[GrantDecision]:
        """Acquire the task's remaining resources in id order, stopping at the first wait."""
        for rid in task.required_resources:
            if rid not in self.resources:
                raise UnknownResource(rid)
        self._tasks[task.id] = task
        out: List[GrantDecision] = []
        rank = int(task.vclass)
        idx = self._next.setdefault(task.id, 0)
        while idx < len(task.required_resources):
            rid = task.required_resources[idx]
            res = self.resources[rid]
            self.counter.add(1)
            if _grantable(res, rank, now):
                res.holders[rank] = task.id
                self.counter.add(1)
                out.append(GrantDecision(task.id, rid, Action.EXCHANGE_DIRECT, Reason.FREE))
                idx += 1
                continue
            reason = Reason.APP_PRIORITY if rank in res.holders else Reason.FCFS
            self._queue(rid).push(task, now)
            self._waiting_on[task.id] = (rid, reason)
            out.append(GrantDecision(task.id, rid, Action.WAIT, reason))
            break
        self._next[task.id] = idx
        return out

    def _scan(self, rid: int, now: int) -> List[GrantDecision]:
        q = self.queues.get(rid)
        res = self.resources[rid]
        grants: List[GrantDecision] = []
        self.counter.add(1)
        if not q or now < res.blocked_until:
            return grants
        self.counter.add(1)
        if q.min_rank() >= min(res.holders, default=4):
            return grants  # every waiter is still gated out
        q.refresh(self._aged_at)
        skipped = []
        while q and q.min_rank() < min(res.holders, default=4):
            task = q.pop()
            rank = int(task.vclass)
            self.counter.add(1)
            if _grantable(res, rank, now):
                res.holders[rank] = task.id
                self.counter.add(1)
                _, reason = self._waiting_on.pop(task.id)
                self._next[task.id] += 1
                grants.append(GrantDecision(task.id, rid, Action.GRANT, reason))
            else:
                skipped.append(task)
        for task in skipped:
            q.push(task, now)
        return grants

    def release(self, task: Task, now: int) -> List[GrantDecision]:
        """Free everything ``task`` holds and hand each resource to its queue."""
        grants: List[GrantDecision] = []
        touched = []
        for rid in task.required_resources:
            res = self.resources.get(rid)
            if res is None:
                continue
            for rank, holder in list(res.holders.items()):
                if holder == task.id:
                    del res.holders[rank]
                    self.counter.add(1)
                    touched.append(rid)
        self._next.pop(task.id, None)
        self._tasks.pop(task.id, None)
        for rid in touched:
            grants.extend(self._scan(rid, now))
        return grants

    def wake(self, rid: int, now: int) -> List[GrantDecision]:
        return self._scan(rid, now)

    def task(self, task_id: int) -> Task:
        return self._tasks[task_id]

    def enqueue_ready(self, task: Task, now: int) -> List[Tuple[Task, int]]:
        self.counter.add(1)
        if not self.ready and self.free_vms:
            # nobody waiting: hand over a VM without touching the heap
            self.counter.add(1)
            self.counter.decision()
            return [(task, self.free_vms.pop())]
        self.ready.refresh(self._aged_at)
        self.ready.push(task, now)
        return self._dispatch()

    def vm_free(self, vm: int, now: int) -> List[Tuple[Task, int]]:
        self.counter.add(2)
        self.free_vms.append(vm)
        return self._dispatch()

    def _dispatch(self) -> List[Tuple[Task, int]]:
        out = []
        if self.free_vms:
            self.ready.refresh(self._aged_at)
        while self.ready and self.free_vms:
            task = self.ready.pop()
            self.counter.add(1)
            vm = self.free_vms.pop()
            self.counter.decision()
            out.append((task, vm))
        return out

    def cancel(self, task: Task) -> None:
        """Drop a task from every queue. Resources it holds stay held."""
        entry = self._waiting_on.pop(task.id, None)
        if entry is not None:
            self.queues[entry[0]].remove(task.id)
        self.ready.remove(task.id)
        self._next.pop(task.id, None)
        self._tasks.pop(task.id, None)

    def on_aging(self, now: int) -> None:
        # queues re-key on their next scan rather than all at once
        self._aged_at = now


class _VmBalancer:
    """Shared exclusive-lock handling for the priority-unaware balancers."""

    resource_first = False

    def __init__(self, resources: Dict[int, ResourceUnit], num_vms: int, counter: Optional[OpCounter] = None):
        if num_vms < 1:
            raise ValueError("need at least one VM")
        self.resources = resources
        self.num_vms = num_vms
        self.counter = counter or OpCounter()
        self._next: Dict[int, int] = {}

    def try_acquire(self, task: Task, now: int) -> Optional[int]:
        """Lock the remaining resources in id order; return the blocking id or None."""
        idx = self._next.setdefault(task.id, 0)
        while idx < len(task.required_resources):
            rid = task.required_resources[idx]
            res = self.resources.get(rid)
            if res is None:
                raise UnknownResource(rid)
            self.counter.add(1)
            if now < res.blocked_until or res.holders:
                self._next[task.id] = idx
                return rid
            res.holders[0] = task.id
            self.counter.add(1)
            idx += 1
        self._next[task.id] = idx
        return None

    def release(self, task: Task, now: int) -> List[GrantDecision]:
        for rid in task.required_resources:
            res = self.resources.get(rid)
            if res is not None and res.holders.get(0) == task.id:
                del res.holders[0]
                self.counter.add(1)
        self._next.pop(task.id, None)
        return []

    def has_all(self, task: Task) -> bool:
        return self._next.get(task.id, 0) >= len(task.required_resources)

    def progress(self, task_id: int) -> int:
        return self._next.get(task_id, 0)

    def on_aging(self, now: int) -> None:
        pass


class RoundRobin(_VmBalancer):
    """Cyclic VM assignment; a busy VM queues work locally in arrival order."""

    kind = "rr"

    def __init__(self, resources, num_vms, counter=None):
        super().__init__(resources, num_vms, counter)
        self.cursor = 0
        self.busy = [False] * num_vms
        self.vm_queues: List[Deque[Task]] = [deque() for _ in range(num_vms)]

    def assign(self, task: Task, now: int = 0) -> GrantDecision:
        vm = self.cursor
        self.cursor = (self.cursor + 1) % self.num_vms
        self.counter.add(1)
        return GrantDecision(task.id, vm, Action.GRANT, Reason.FREE)

    def submit(self, task: Task, now: int) -> List[Tuple[Task, int]]:
        vm = self.assign(task, now).target
        self.counter.add(2)  # probe the busy flag, then queue or set it
        if self.busy[vm]:
            self.vm_queues[vm].append(task)
            return []
        self.busy[vm] = True
        self.counter.decision()
        return [(task, vm)]

    def vm_free(self, vm: int, now: int) -> List[Tuple[Task, int]]:
        self.counter.add(2)  # probe the local queue, then pop or clear the flag
        if self.vm_queues[vm]:
            self.counter.decision()
            return [(self.vm_queues[vm].popleft(), vm)]
        self.busy[vm] = False
        return []

    def cancel(self, task: Task) -> None:
        for q in self.vm_queues:
            if task in q:
                q.remove(task)
        self._next.pop(task.id, None)


class Throttled(_VmBalancer):
    """First-available VM from an index table; FIFO wait queue when all are busy."""

    kind = "throttled"

    def __init__(self, resources, num_vms, counter=None):
        super().__init__(resources, num_vms, counter)
        self.available = [True] * num_vms
        self.waiting: Deque[Task] = deque()

    def assign(self, task: Task, now: int = 0) -> GrantDecision:
        for vm, free in enumerate(self.available):
            self.counter.add(1)
            if free:
                self.available[vm] = False
                self.counter.add(1)
                return GrantDecision(task.id, vm, Action.GRANT, Reason.FREE)
        return GrantDecision(task.id, -1, Action.WAIT, Reason.QUEUED)

    def submit(self, task: Task, now: int) -> List[Tuple[Task, int]]:
        self.counter.add(1)
        if self.waiting:
            # work conservation means no VM is free here
            self.counter.add(1)
            self.waiting.append(task)
            return []
        d = self.assign(task, now)
        if d.action is Action.WAIT:
            self.counter.add(1)
            self.waiting.append(task)
            return []
        self.counter.decision()
        return [(task, d.target)]

    def vm_free(self, vm: int, now: int) -> List[Tuple[Task, int]]:
        self.counter.add(2)  # mark available, probe the wait queue
        self.available[vm] = True
        if not self.waiting:
            return []
        task = self.waiting.popleft()
        self.counter.add(1)
        d = self.assign(task, now)
        self.counter.decision()
        return [(task, d.target)]

    def cancel(self, task: Task) -> None:
        if task in self.waiting:
            self.waiting.remove(task)
        self._next.pop(task.id, None)


def make_policy(kind: str, resources: Dict[int, ResourceUnit], num_vms: int,
                aging: Optional[AgingPolicy] = None, counter: Optional[OpCounter] = None):
    if kind == "priority":
        return PriorityVDTN(resources, num_vms, aging, counter)
    if kind == "rr":
        return RoundRobin(resources, num_vms, counter)
    if kind == "throttled":
        return Throttled(resources, num_vms, counter)
    raise ValueError(f"unknown policy {kind!r}; expected one of {POLICY_KINDS}")
