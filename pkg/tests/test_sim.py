import math
import random

import pytest
from hypothesis import given, strategies as st

from pcnflow.errors import UnknownUnit
from pcnflow.graph import Topology
from pcnflow.sim import EventLog, EventQueue, RebalanceConfig, SimConfig
from pcnflow.sim.channel import (
    MILLI, TransactionUnit, UnitQueue, estimate_channel_demand, mark_if_delayed,
)
from pcnflow.sim.core import DROPPED, ENQUEUED, FORWARDED, equalized

from simkit import make_sim, open_txn, push


def unit(i, amount=1000, deadline=10.0):
    return TransactionUnit(i, i, amount, 0, 1, (0, 1), deadline)


def log_times(sim, kind):
    return [float(line.split()[0]) for line in sim.log.text().splitlines() if line.split()[1] == kind]


# ---- event engine ----------------------------------------------------------

def test_empty_run_returns_immediately():
    q = EventQueue()
    assert q.run_until(5.0) == 0
    assert q.now == 5.0


def test_same_time_events_keep_insertion_order():
    q, seen = EventQueue(), []
    for tag in "abc":
        q.schedule(1.0, "x", seen.append, tag)
    q.schedule(0.5, "x", seen.append, "first")
    q.run_until(2.0)
    assert seen == ["first", "a", "b", "c"]


def test_cannot_schedule_in_past():
    q = EventQueue()
    q.run_until(1.0)
    with pytest.raises(ValueError):
        q.schedule(0.5, "x", print)
    with pytest.raises(ValueError):
        q.run_until(0.5)


@given(st.lists(st.integers(0, 20), min_size=1, max_size=200))
def test_events_come_out_sorted(times):
    q, seen = EventQueue(), []
    for n, t in enumerate(times):
        q.schedule(float(t), "x", seen.append, (t, n))
    q.run_until(100.0)
    assert seen == sorted(seen)


def test_random_schedule_replays_identically():
    def run(seed):
        rng = random.Random(seed)
        q, log = EventQueue(), EventLog()

        def fire(tag):
            log.write(q.now, "ev", tag=tag)
            if rng.random() < 0.5:
                q.schedule(q.now + rng.choice([0.0, 0.1, 0.25]), "ev", fire, tag + 1)

        for n in range(1000):
            q.schedule(rng.randint(0, 50) / 10, "ev", fire, n * 1000)
        q.run_until(1e9)
        return log.text()

    assert run(7) == run(7)
    assert run(7) != run(8)


# ---- queues and marking ----------------------------------------------------

@pytest.mark.parametrize(
    "policy, amounts, deadlines, expected",
    [
        ("LIFO", [1, 1, 1], [9, 9, 9], [3, 2, 1]),
        ("FIFO", [1, 1, 1], [9, 9, 9], [1, 2, 3]),
        ("EDF", [1, 1, 1], [9, 4, 4], [2, 3, 1]),
        ("SPF", [5, 2, 2], [9, 9, 9], [2, 3, 1]),
    ],
)
def test_service_orders(policy, amounts, deadlines, expected):
    q = UnitQueue(policy)
    for i, (a, d) in enumerate(zip(amounts, deadlines), start=1):
        q.push(unit(i, a * 1000, d), now=float(i))
    assert [q.pop().id for _ in range(3)] == expected


@given(st.sampled_from(["LIFO", "FIFO", "EDF", "SPF"]),
       st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=1, max_size=30),
       st.data())
def test_queue_order_matches_sort(policy, items, data):
    q = UnitQueue(policy)
    units = [unit(i, a * 1000, float(d)) for i, (a, d) in enumerate(items)]
    for u in units:
        q.push(u, 0.0)
    gone = set(data.draw(st.sets(st.sampled_from(range(len(units))))))
    for i in gone:
        assert q.remove(units[i])
    keep = [u for u in units if u.id not in gone]
    key = {
        "LIFO": lambda u: -u.id,
        "FIFO": lambda u: u.id,
        "EDF": lambda u: (u.deadline, u.id),
        "SPF": lambda u: (u.amount, u.id),
    }[policy]
    assert q.total == sum(u.amount for u in keep)
    assert [q.pop().id for _ in range(len(keep))] == [u.id for u in sorted(keep, key=key)]
    assert q.peek() is None


def test_unknown_policy():
    with pytest.raises(ValueError):
        UnitQueue("RANDOM")


def test_marking_threshold():
    u = unit(1)
    assert mark_if_delayed(u, 1.0, 1.4, 0.3)
    v = unit(2)
    assert not mark_if_delayed(v, 1.0, 1.1, 0.3)
    assert mark_if_delayed(u, 2.0, 2.0, 0.3)  # sticky
    with pytest.raises(ValueError):
        mark_if_delayed(v, 2.0, 1.0, 0.3)


def test_oldest_wait_skips_removed():
    q = UnitQueue("LIFO")
    a, b = unit(1), unit(2)
    q.push(a, 1.0)
    q.push(b, 2.0)
    assert q.oldest_wait(3.0) == 2.0
    q.remove(a)
    assert q.oldest_wait(3.0) == 1.0
    q.pop()
    assert q.oldest_wait(3.0) == 0.0


# ---- forwarding ------------------------------------------------------------

def line(*caps, delays=None):
    delays = delays or [0.1] * len(caps)
    return Topology.from_edges([(i, i + 1, c, d) for i, (c, d) in enumerate(zip(caps, delays))])


def test_forward_outcomes():
    sim, _ = make_sim(line(20))  # 10 tokens per side
    txn = open_txn(sim, 0, 1, 100)
    assert push(sim, txn, 3, (0, 1))[1] == FORWARDED
    ch = sim.channel(0, 1)
    assert ch.balance[0] == 7 * MILLI and ch.inflight[0] == 3 * MILLI and ch.conserved()
    assert push(sim, txn, 8, (0, 1))[1] == ENQUEUED
    assert ch.balance[0] == 7 * MILLI  # queued units hold no funds


def test_drop_at_queue_bound():
    sim, scheme = make_sim(line(10))
    txn = open_txn(sim, 0, 1, 20000)
    assert push(sim, txn, 6000, (0, 1))[1] == ENQUEUED
    assert push(sim, txn, 6000, (0, 1))[1] == ENQUEUED  # exactly 12000 queued
    u, outcome = push(sim, txn, 1, (0, 1))
    assert outcome == DROPPED
    sim.run_until(1.0)
    assert scheme.fails == [(0.0, u.id, "drop", 0)]


def test_drop_notice_walks_back():
    sim, scheme = make_sim(line(100, 10, delays=[0.1, 0.2]), SimConfig(queue_bound=5))
    txn = open_txn(sim, 0, 2, 100)
    push(sim, txn, 5, (0, 1, 2))  # fills the 1 -> 2 side
    push(sim, txn, 5, (0, 1, 2))  # queued at 1, fills the bound
    u, _ = push(sim, txn, 1, (0, 1, 2))
    sim.run_until(0.15)
    assert sim.channel(0, 1).inflight[0] == 11 * MILLI
    sim.run_until(0.5)
    fail = [f for f in scheme.fails if f[1] == u.id]
    assert fail == [(pytest.approx(0.2), u.id, "drop", 1)]
    assert sim.channel(0, 1).conserved()


def test_three_hop_settlement_timeline():
    sim, scheme = make_sim(line(10, 10, 10, delays=[0.1, 0.2, 0.3]))
    txn = open_txn(sim, 0, 3, 1)
    push(sim, txn, 1, (0, 1, 2, 3))
    sim.run_until(5.0)
    assert log_times(sim, "deliver") == [pytest.approx(0.6)]
    assert log_times(sim, "settle") == [pytest.approx(t) for t in (0.9, 1.1, 1.2)]
    assert scheme.acks[0][0] == pytest.approx(1.2)
    for k in range(3):
        ch = sim.channel(k, k + 1)
        assert ch.balance == {k: 4 * MILLI, k + 1: 6 * MILLI}
    assert txn.succeeded


def test_ack_releases_queued_unit_same_instant():
    sim, _ = make_sim(line(2))  # one token per side
    a = open_txn(sim, 1, 0, 1)
    b = open_txn(sim, 0, 1, 1)
    push(sim, b, 1, (0, 1))
    push(sim, a, 1, (1, 0))
    _, outcome = push(sim, a, 1, (1, 0))  # node 1 is out of funds
    assert outcome == ENQUEUED
    sim.run_until(1.0)
    # b's ack reaches node 0 at 0.2 and credits node 1, which sends at once
    fwd = [float(l.split()[0]) for l in sim.log.text().splitlines() if " fwd " in l]
    assert fwd[-1] == pytest.approx(0.2)


def test_lifo_serves_newest_when_funds_return():
    sim, _ = make_sim(line(2))
    blocker = open_txn(sim, 0, 1, 1)
    push(sim, blocker, 1, (0, 1))
    old = open_txn(sim, 0, 1, 1)
    new = open_txn(sim, 0, 1, 1)
    sim.run_until(1.0)
    ua, _ = push(sim, old, 1, (0, 1))
    sim.run_until(1.5)
    ub, _ = push(sim, new, 1, (0, 1))
    sim.rebalance_router(0, "replenish")  # returns one token to node 0's side
    assert ub.state == "flight" and ua.state == "queued"


def test_late_unit_is_refunded():
    sim, scheme = make_sim(line(10, delays=[1.0]))
    txn = open_txn(sim, 0, 1, 1, deadline=0.5)
    u, _ = push(sim, txn, 1, (0, 1))
    sim.schedule(txn.deadline, "deadline", sim._on_deadline, txn)
    sim.run_until(5.0)
    assert txn.expired and txn.delivered == 0
    assert scheme.fails[0][2] == "late"
    assert sim.channel(0, 1).balance == {0: 5 * MILLI, 1: 5 * MILLI}


@pytest.mark.parametrize("refill_at, marked", [(0.05, False), (0.5, True)])
def test_mark_survives_to_sender(refill_at, marked):
    # the unit waits at the first hop until node 0 is refilled, then crosses
    # an idle second hop; the first hop's mark must reach the sender
    sim, scheme = make_sim(line(2, 100))
    push(sim, open_txn(sim, 0, 1, 1), 1, (0, 1))
    u, _ = push(sim, open_txn(sim, 0, 2, 1), 1, (0, 1, 2))
    sim.schedule(refill_at, "refill", sim.rebalance_router, 0, "replenish")
    sim.run_until(5.0)
    assert [a[2] for a in scheme.acks if a[1] == u.id] == [marked]


def test_unknown_unit_ack():
    sim, _ = make_sim(line(10))
    with pytest.raises(UnknownUnit):
        sim.deliver_ack(999)


# ---- cancellation ----------------------------------------------------------

def blocked_sim():
    sim, scheme = make_sim(line(2))
    blocker = open_txn(sim, 0, 1, 1, deadline=100)
    push(sim, blocker, 1, (0, 1))
    return sim, scheme


def test_cancel_removes_queued_units():
    sim, scheme = blocked_sim()
    txn = open_txn(sim, 0, 1, 2)
    push(sim, txn, 1, (0, 1))
    push(sim, txn, 1, (0, 1))
    assert len(sim.channel(0, 1).queue[0]) == 2
    assert sim.cancel_transaction(txn) == 2
    assert len(sim.channel(0, 1).queue[0]) == 0
    sim.run_until(0.01)
    assert [f[2] for f in scheme.fails] == ["cancel", "cancel"]


def test_cancel_after_delivery_is_noop():
    sim, _ = make_sim(line(10))
    txn = open_txn(sim, 0, 1, 1)
    push(sim, txn, 1, (0, 1))
    sim.run_until(1.0)
    assert sim.cancel_transaction(txn) == 0
    assert txn.succeeded


def test_cancel_mixed_counts_delivered_part():
    sim, scheme = make_sim(line(3))  # 1.5 tokens per side
    txn = open_txn(sim, 0, 1, 2)
    push(sim, txn, 1, (0, 1))
    push(sim, txn, 1, (0, 1))  # only half a token left, queued
    sim.run_until(0.15)
    assert sim.cancel_transaction(txn) == 1
    sim.run_until(1.0)
    assert txn.delivered == 1 * MILLI
    assert [f[2] for f in scheme.fails] == ["cancel"]
    assert len(scheme.acks) == 1


# ---- rebalancing -----------------------------------------------------------

def star(n_leaves, cap=20):
    return Topology.from_edges([(0, i, cap) for i in range(1, n_leaves + 1)])


def set_own(sim, node, nbr, amount):
    ch = sim.channel(node, nbr)
    moved = ch.balance[node] - amount * MILLI
    ch.balance[node] -= moved
    ch.balance[nbr] += moved


def test_equalize_two():
    sim, _ = make_sim(star(2))
    set_own(sim, 0, 1, 10)
    set_own(sim, 0, 2, 0)
    rec = sim.rebalance_router(0, "equalize")
    assert [sim.channel(0, i).balance[0] for i in (1, 2)] == [5 * MILLI] * 2
    assert rec.injected == 0 and rec.moved == 10 * MILLI
    assert all(ch.conserved() for ch in sim.channels.values())


def test_equalize_three():
    sim, _ = make_sim(star(3))
    for i, b in zip((1, 2, 3), (9, 0, 0)):
        set_own(sim, 0, i, b)
    sim.rebalance_router(0, "equalize")
    assert [sim.channel(0, i).balance[0] for i in (1, 2, 3)] == [3 * MILLI] * 3
    assert all(ch.conserved() for ch in sim.channels.values())
    assert len(sim.rebalances) == 1


def test_single_channel_no_op():
    sim, _ = make_sim(star(1))
    set_own(sim, 0, 1, 3)
    assert sim.rebalance_router(0, "equalize") is None
    assert sim.rebalances == []


def test_replenish_restores_start():
    sim, _ = make_sim(star(2))
    set_own(sim, 0, 1, 2)
    rec = sim.rebalance_router(0, "replenish")
    assert sim.channel(0, 1).balance[0] == 10 * MILLI
    assert rec.injected == 8 * MILLI


def test_trigger_counts_routed_value():
    cfg = SimConfig(rebalance=RebalanceConfig(trigger=2, mode="replenish"))
    sim, _ = make_sim(line(20), cfg)
    txn = open_txn(sim, 0, 1, 3)
    for _ in range(3):
        push(sim, txn, 1, (0, 1))
    sim.run_until(1.0)
    assert len(sim.rebalances) == 1
    assert sim.channel(0, 1).balance[0] == 10 * MILLI


def test_equalized_helper():
    assert equalized([10, 0]) == [5, 5]
    assert equalized([9, 0, 0]) == [3, 3, 3]
    assert equalized([1, 0, 0]) == [1, 0, 0]


def test_rebalance_config_checks():
    with pytest.raises(ValueError):
        RebalanceConfig(trigger=0)
    with pytest.raises(ValueError):
        RebalanceConfig(trigger=1, mode="bogus")


# ---- demand estimation ----------------------------------------------------

def test_little_law_examples():
    assert estimate_channel_demand((2, 2), (2, 2), (6, 6)) == (6, 6)
    assert estimate_channel_demand((4, 2), (2, 2), (6, 6)) == (12, 6)
    assert estimate_channel_demand((1, 1), (0, 1), (6, 6))[0] == math.inf


def test_little_law_on_saturated_channel():
    """Closed loop: each side keeps 20 one-token units outstanding on a 10-token channel."""
    topo = line(10, delays=[0.05])
    sim, scheme = make_sim(topo, SimConfig(stats_tau=2.0), log=False)
    txns = {s: open_txn(sim, s, 1 - s, 10**6, deadline=1e9) for s in (0, 1)}

    def resend(unit, now):
        push(sim, txns[unit.src], 1, unit.route)

    scheme.on_ack = resend
    for s in (0, 1):
        for _ in range(20):
            push(sim, txns[s], 1, (s, 1 - s))
    sim.run_until(30.0)
    ch = sim.channel(0, 1)
    assert len(ch.queue[0]) and len(ch.queue[1])
    arr = tuple(ch.stats.arrival(s, sim.now) for s in (0, 1))
    srv = tuple(ch.stats.service(s, sim.now) for s in (0, 1))
    inf = tuple(ch.inflight[s] / MILLI for s in (0, 1))
    m = estimate_channel_demand(arr, srv, inf)
    assert sum(m) == pytest.approx(10.0, rel=0.1)


# ---- whole-run audits ------------------------------------------------------

def fuzz_run(seed, log=True):
    from pcnflow.experiments import ExperimentConfig, run_experiment

    cfg = ExperimentConfig(seed=seed, horizon=12, window_start=2, window_end=10)
    cfg.topology.kind = "scalefree"
    cfg.topology.capacity_mean = 30
    cfg.workload.size_scale = 0.05
    cfg.workload.rate_per_sender = 3
    cfg.sim.check_conservation = True
    cfg.sim.log = log
    return run_experiment(cfg, keep_sim=True)


def test_conservation_and_replay():
    a, b = fuzz_run(5), fuzz_run(5)
    assert a.sim.events.processed > 3000
    assert a.log == b.log
    assert a.report.scalars() == b.report.scalars()


def test_unit_accounting():
    res = fuzz_run(9, log=False)
    sim = res.sim
    for txn in sim.txns.values():
        live = sum(u.amount for u in txn.live.values() if u.state != "delivered")
        assert txn.delivered + live <= txn.amount
        assert not (txn.succeeded and txn.delivered != txn.amount)
    total_cap = sum(ch.capacity for ch in sim.channels.values())
    held = sum(sum(ch.balance.values()) + sum(ch.inflight.values()) for ch in sim.channels.values())
    assert held == total_cap
