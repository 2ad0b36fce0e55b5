"""Routing limits, balanced routing and packet-level simulation for payment channel networks."""

from .graph import DemandMatrix, Topology, decompose, spanning_tree_route
from .lp import solve_lp

__version__ = "0.1.0"

__all__ = ["DemandMatrix", "Topology", "decompose", "spanning_tree_route", "solve_lp", "__version__"]
