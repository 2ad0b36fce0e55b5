"""Scripted sender used to drive the simulator directly in tests."""

from pcnflow.sim import Simulation, SimConfig
from pcnflow.sim.channel import MILLI
from pcnflow.sim.core import Transaction
from pcnflow.transport.base import Scheme


class Scripted(Scheme):
    """Does nothing on arrival; records every callback."""

    name = "scripted"

    def __init__(self, queueing=True):
        self.queueing = queueing
        self.acks = []
        self.fails = []

    def on_transaction(self, txn, now):
        pass

    def on_ack(self, unit, now):
        self.acks.append((now, unit.id, unit.marked))

    def on_fail(self, unit, now, reason, hop):
        self.fails.append((now, unit.id, reason, hop))


def make_sim(topo, config=None, log=True, queueing=True):
    scheme = Scripted(queueing)
    return Simulation(topo, scheme, config or SimConfig(), log=log), scheme


def open_txn(sim, src, dst, tokens, deadline=5.0, tid=None):
    tid = len(sim.txns) if tid is None else tid
    txn = Transaction(tid, src, dst, int(round(tokens * MILLI)), sim.now, sim.now + deadline)
    sim.txns[tid] = txn
    return txn


def push(sim, txn, tokens, route):
    unit = sim.new_unit(txn, int(round(tokens * MILLI)), route)
    return unit, sim.send(unit)
