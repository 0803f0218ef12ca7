from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdtn.model import AppClass, ResourceUnit, VehicleClass
from vdtn.priority import AgingPolicy
from vdtn.schedulers import (
    Action,
    ContentionQueue,
    OpCounter,
    PriorityVDTN,
    Reason,
    RoundRobin,
    Throttled,
    UnknownResource,
    make_policy,
    pop_order_oracle,
)

from conftest import make_task

H, M, N = VehicleClass.HIGH, VehicleClass.MEDIUM, VehicleClass.NORMAL
SAFETY, EFFICIENCY, SOCIAL = AppClass.SAFETY, AppClass.EFFICIENCY, AppClass.SOCIAL


def table(n=3):
    return {i: ResourceUnit(i) for i in range(n)}


def test_high_task_on_free_resource_exchanges_directly():
    p = PriorityVDTN(table(), 2)
    out = p.request(make_task(1, H, SAFETY), 0)
    assert [(d.target, d.action, d.reason) for d in out] == [(0, Action.EXCHANGE_DIRECT, Reason.FREE)]


def test_medium_waits_behind_high_holder():
    p = PriorityVDTN(table(), 2)
    p.request(make_task(1, H, SOCIAL), 0)
    out = p.request(make_task(2, M, SAFETY), 1)
    assert [(d.action, d.reason) for d in out] == [(Action.WAIT, Reason.FCFS)]


def test_same_class_holder_means_app_priority_wait():
    p = PriorityVDTN(table(), 2)
    p.request(make_task(1, M), 0)
    out = p.request(make_task(2, M), 0)
    assert out[0].reason is Reason.APP_PRIORITY


def test_high_may_share_a_resource_held_by_lower_class():
    p = PriorityVDTN(table(), 2)
    p.request(make_task(1, N), 0)
    assert p.request(make_task(2, M), 0)[0].action is Action.EXCHANGE_DIRECT
    assert p.request(make_task(3, H), 0)[0].action is Action.EXCHANGE_DIRECT
    assert p.request(make_task(4, N), 0)[0].action is Action.WAIT


def test_two_high_contenders_safety_first():
    p = PriorityVDTN(table(), 2)
    holder = make_task(1, H, EFFICIENCY)
    p.request(holder, 0)
    eff = make_task(2, H, EFFICIENCY, enqueue=1)
    safe = make_task(3, H, SAFETY, enqueue=2)
    p.request(eff, 1)
    p.request(safe, 2)
    grants = p.release(holder, 5)
    assert [g.task_id for g in grants] == [3]
    assert [g.task_id for g in p.release(safe, 6)] == [2]


def test_unknown_resource():
    with pytest.raises(UnknownResource):
        PriorityVDTN(table(1), 1).request(make_task(1, H, resources=(4,)), 0)


def test_release_with_empty_queue():
    res = table()
    p = PriorityVDTN(res, 1)
    t = make_task(1, N)
    p.request(t, 0)
    assert p.release(t, 3) == [] and res[0].free


def test_release_prefers_class_over_arrival():
    p = PriorityVDTN(table(), 2)
    holder = make_task(1, H)
    p.request(holder, 0)
    normal = make_task(2, N, SAFETY, enqueue=2)
    medium = make_task(3, M, SAFETY, enqueue=5)
    p.request(normal, 2)
    p.request(medium, 5)
    oracle = pop_order_oracle([normal, medium], 6, None)
    grants = p.release(holder, 6)
    assert grants[0].task_id == oracle[0].id == 3
    # the Normal waiter stays gated out while the Medium holds the resource
    assert [g.task_id for g in grants] == [3]
    assert [g.task_id for g in p.release(medium, 7)] == [2]


def test_release_equal_priority_in_arrival_order():
    p = PriorityVDTN(table(), 2)
    holder = make_task(1, N)
    p.request(holder, 0)
    waiters = [make_task(10 + i, N, enqueue=i + 1) for i in range(3)]
    for w in waiters:
        p.request(w, w.enqueue_time)
    order, current = [], holder
    for now in range(5, 8):
        (g,) = p.release(current, now)
        order.append(g.task_id)
        current = next(w for w in waiters if w.id == g.task_id)
    assert order == [10, 11, 12]


def test_partial_grants_are_held_in_id_order():
    res = table(3)
    p = PriorityVDTN(res, 1)
    blocker = make_task(1, H, resources=(1,))
    p.request(blocker, 0)
    t = make_task(2, H, resources=(2, 0, 1), enqueue=1)
    out = p.request(t, 1)
    assert [(d.target, d.action) for d in out] == [(0, Action.EXCHANGE_DIRECT), (1, Action.WAIT)]
    assert res[0].held_by(2) and not res[2].held_by(2)
    grants = p.release(blocker, 4)
    assert [(g.task_id, g.target) for g in grants] == [(2, 1)]
    p.request(t, 4)
    assert p.has_all(t)


def test_ready_queue_orders_vm_dispatch():
    p = PriorityVDTN(table(), 1)
    a, b, c = make_task(1, N), make_task(2, H), make_task(3, M)
    assert p.enqueue_ready(a, 0) == [(a, 0)]
    assert p.enqueue_ready(b, 0) == [] and p.enqueue_ready(c, 0) == []
    assert p.vm_free(0, 4) == [(b, 0)]


# --- baselines -------------------------------------------------------------


def test_round_robin_examples():
    rr = RoundRobin(table(), 3)
    assert [rr.assign(make_task(i)).target for i in range(5)] == [0, 1, 2, 0, 1]
    one = RoundRobin(table(), 1)
    assert {one.assign(make_task(i)).target for i in range(4)} == {0}
    rr3 = RoundRobin(table(), 3)
    rr3.cursor = 2
    assert rr3.assign(make_task(0)).target == 2 and rr3.cursor == 0


def test_throttled_examples():
    th = Throttled(table(), 2)
    assert th.submit(make_task(1), 0)[0][1] == 0
    assert th.submit(make_task(2), 0)[0][1] == 1
    t3 = make_task(3)
    assert th.submit(t3, 0) == []
    assert th.vm_free(0, 5) == [(t3, 0)]


def test_balancers_ignore_priority():
    th = Throttled(table(), 1)
    th.submit(make_task(1, N), 0)
    late_high = make_task(3, H)
    early_normal = make_task(2, N)
    th.submit(early_normal, 1)
    th.submit(late_high, 2)
    assert th.vm_free(0, 3)[0][0] is early_normal


def test_balancer_locks_are_exclusive():
    res = table()
    rr = RoundRobin(res, 2)
    a, b = make_task(1, H), make_task(2, H)
    assert rr.try_acquire(a, 0) is None
    assert rr.try_acquire(b, 0) == 0
    rr.release(a, 1)
    assert rr.try_acquire(b, 1) is None


def test_make_policy_rejects_unknown():
    with pytest.raises(ValueError):
        make_policy("fifo", table(), 1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 3)), min_size=1, max_size=60), st.integers(1, 4))
def test_round_robin_is_pure_in_arrival_order(ops, vms):
    a, b = RoundRobin(table(), vms), RoundRobin(table(), vms)
    seq_a = [a.assign(make_task(i)).target for i in range(len(ops))]
    seq_b = [b.assign(make_task(i + 100, H)).target for i in range(len(ops))]
    assert seq_a == seq_b == [i % vms for i in range(len(ops))]
    assert 0 <= a.cursor < vms


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.just("arrive"), st.integers(0, 3)), max_size=80), st.integers(1, 4))
def test_throttled_never_double_books_and_conserves_work(ops, vms):
    th = Throttled(table(), vms)
    running = {}
    tid = 0
    for op in ops:
        if op == "arrive":
            started = th.submit(make_task(tid), 0)
            tid += 1
        elif op < vms and op in running:
            del running[op]
            started = th.vm_free(op, 0)
        else:
            continue
        for task, vm in started:
            assert vm not in running
            running[vm] = task
        assert len(th.available) == vms
        if th.waiting:
            assert not any(th.available)
        assert [not a for a in th.available] == [v in running for v in range(vms)]


# --- contention queue and oracle -------------------------------------------


def test_oracle_single():
    t = make_task(1)
    assert pop_order_oracle([t], 0, AgingPolicy()) == [t]


def test_oracle_aged_normal_beats_fresh_high():
    normal = make_task(1, N, SAFETY, enqueue=0)      # base 31
    high = make_task(2, H, SOCIAL, enqueue=2500)      # base 15
    assert [t.id for t in pop_order_oracle([high, normal], 2500, AgingPolicy())] == [1, 2]


task_lists = st.lists(
    st.tuples(st.sampled_from(list(VehicleClass)), st.sampled_from(list(AppClass)), st.integers(0, 3000)),
    min_size=1, max_size=120,
)


@settings(max_examples=150, deadline=None)
@given(task_lists, st.integers(0, 2000), st.booleans())
def test_queue_pops_match_oracle(specs, extra, aging_on):
    aging = AgingPolicy() if aging_on else None
    tasks = [make_task(i, c, a, enqueue=t) for i, (c, a, t) in enumerate(specs)]
    q = ContentionQueue(aging)
    for t in sorted(tasks, key=lambda t: (t.enqueue_time, t.id)):
        q.refresh(t.enqueue_time // 100 * 100)
        q.push(t, t.enqueue_time)
    now = max(t.enqueue_time for t in tasks) + extra
    q.reage(now)
    assert [q.pop().id for _ in range(len(tasks))] == [t.id for t in pop_order_oracle(tasks, now, aging)]


@settings(max_examples=80, deadline=None)
@given(task_lists)
def test_queue_remove_and_class_counts(specs):
    tasks = [make_task(i, c, a, enqueue=t) for i, (c, a, t) in enumerate(specs)]
    q = ContentionQueue(None)
    for t in tasks:
        q.push(t, t.enqueue_time)
    gone = tasks[len(tasks) // 2]
    assert q.remove(gone.id) and not q.remove(gone.id)
    rest = [t for t in tasks if t is not gone]
    assert q.min_rank() == min((int(t.vclass) for t in rest), default=4)
    assert [t.id for t in q.tasks()] == [t.id for t in pop_order_oracle(rest, 10_000, None)]


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(list(VehicleClass)), st.sampled_from(list(AppClass)),
                          st.lists(st.integers(0, 4), min_size=1, max_size=3)), min_size=1, max_size=40))
def test_class_gates_hold_under_any_request_mix(specs):
    """Without aging, no task holds a resource alongside a same-or-better-class holder."""
    res = table(5)
    p = PriorityVDTN(res, 3)
    live = []
    for i, (c, a, rs) in enumerate(specs):
        t = make_task(i, c, a, enqueue=i, resources=rs)
        p.request(t, i)
        live.append(t)
        if i % 3 == 2:
            done = next((x for x in live if p.has_all(x)), None)
            if done is not None:
                live.remove(done)
                for g in p.release(done, i):
                    p.request(p.task(g.task_id), i)
        for r in res.values():
            # one holder per class at most, by construction of the key
            assert len(set(r.holders.values())) == len(r.holders)
            for rank, tid in r.holders.items():
                waiting = p.queues.get(r.id)
                if waiting:
                    assert all(int(w.vclass) >= min(r.holders) for w in waiting.tasks())


def test_op_counter_can_be_disabled():
    c = OpCounter(enabled=False)
    c.add(5)
    c.heap_op(100)
    c.decision()
    assert c.ops == 0 and c.decisions == 0
