import math

import numpy as np
import pytest

from pcnflow.errors import EmptyPathSet, StepSizeTooLarge
from pcnflow.fluid import build_balanced_lp
from pcnflow.graph import DemandMatrix
from pcnflow.lp import solve_lp
from pcnflow.ode import check_kkt_parallel, integrate_fluid_spider, parallel_network, service_rates

BOTH = DemandMatrix({(0, 1): math.inf, (1, 0): math.inf})


@pytest.mark.parametrize(
    "q, expected",
    [
        ((0.0, 0.0), 3.0),  # both empty: min of the two arrival rates
        ((1.0, 0.0), 4.0),  # forward backlogged: limited by reverse arrivals
        ((0.0, 1.0), 3.0),
        ((1.0, 1.0), 5.0),  # both backlogged: full half capacity
    ],
)
def test_service_rate_cases(q, expected):
    y = service_rates(np.array([3.0, 4.0]), np.array(q), np.array([5.0]))
    assert y.tolist() == [expected, expected]


def test_service_rate_capped():
    y = service_rates(np.array([30.0, 40.0]), np.zeros(2), np.array([5.0]))
    assert y.tolist() == [5.0, 5.0]


def test_parallel_network_shape():
    topo, ps = parallel_network([12, 8])
    assert len(topo.channels) == 6
    assert ps[(0, 1)] == [(0, 2, 3, 1), (0, 4, 5, 1)]
    assert ps[(1, 0)] == [(1, 3, 2, 0), (1, 5, 4, 0)]
    assert topo.capacity(2, 3) == 12 and topo.capacity(4, 5) == 8


def test_steady_state_matches_lp_and_kkt():
    topo, ps = parallel_network([12, 8], delay=0.1)
    lp = solve_lp(build_balanced_lp(topo, BOTH, ps, 1.0))
    tr = integrate_fluid_spider(topo, BOTH, ps, 1.0, horizon=400, q_thresh=30, mark_gain=100)
    rep = check_kkt_parallel(tr.steady_state(), lp, topo, 1.0)
    assert rep.lp_throughput == pytest.approx(20.0)
    assert rep.max_residual < 0.05
    assert rep.throughput_error < 0.05
    assert rep.channel_rate_error < 0.05
    assert all(v >= 0 for v in rep.lam.values())


def test_demand_cap_respected():
    topo, ps = parallel_network([12, 8], delay=0.1)
    d = DemandMatrix({(0, 1): 2.0, (1, 0): 2.0})
    tr = integrate_fluid_spider(topo, d, ps, 1.0, horizon=20)
    for s in tr.states:
        assert sum(r for p, r in s.x.items() if p[0] == 0) <= 2.0 + 1e-9
        assert all(v >= 0 for v in s.q.values())
        assert all(0 <= v <= 1 for v in s.f.values())


def test_coarse_step_detected():
    topo, ps = parallel_network([1, 1], delay=0.1)
    with pytest.raises(StepSizeTooLarge):
        integrate_fluid_spider(topo, BOTH, ps, 1.0, horizon=200, dt=1.5, q_thresh=0.1, mark_gain=50)


def test_missing_paths():
    topo, ps = parallel_network([1, 1])
    with pytest.raises(EmptyPathSet):
        integrate_fluid_spider(topo, BOTH, {(0, 1): ps[(0, 1)]}, 1.0, horizon=1)


def test_bad_step():
    topo, ps = parallel_network([1, 1])
    with pytest.raises(ValueError):
        integrate_fluid_spider(topo, BOTH, ps, 1.0, horizon=1, dt=0)
