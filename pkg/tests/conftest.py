import os

import pytest
from hypothesis import HealthCheck, settings

from pcnflow.graph import DemandMatrix, Topology

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


# five routers, eight payment pairs: the worked example used throughout
GOLDEN_EDGES = [(1, 2), (2, 3), (2, 4), (3, 4), (3, 5)]
GOLDEN_DEMAND = {
    (1, 2): 1, (1, 5): 1, (2, 4): 2, (4, 1): 1,
    (3, 2): 2, (4, 3): 1, (1, 3): 1, (5, 3): 3,
}


@pytest.fixture
def golden_topology():
    return Topology.from_edges(GOLDEN_EDGES, capacity=100.0)


@pytest.fixture
def golden_demand():
    return DemandMatrix(GOLDEN_DEMAND)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
