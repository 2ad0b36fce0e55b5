"""Discrete-event payment channel network simulator."""

from .channel import (
    MILLI,
    POLICIES,
    ChannelState,
    ChannelStats,
    TransactionUnit,
    UnitQueue,
    estimate_channel_demand,
    mark_if_delayed,
    to_milli,
    to_tokens,
)
from .core import (
    DROPPED,
    ENQUEUED,
    FORWARDED,
    NO_FUNDS,
    ConservationError,
    RebalanceConfig,
    RebalanceRecord,
    SimConfig,
    Simulation,
    Transaction,
    equalized,
)
from .engine import EventLog, EventQueue

__all__ = [
    "MILLI", "POLICIES", "ChannelState", "ChannelStats", "TransactionUnit", "UnitQueue",
    "estimate_channel_demand", "mark_if_delayed", "to_milli", "to_tokens", "DROPPED",
    "ENQUEUED", "FORWARDED", "NO_FUNDS", "ConservationError", "RebalanceConfig",
    "RebalanceRecord", "SimConfig", "Simulation", "Transaction", "equalized", "EventLog",
    "EventQueue",
]
