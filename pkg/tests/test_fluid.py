import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcnflow.errors import EmptyPathSet
from pcnflow.fluid import (
    build_balanced_lp, build_bounded_rebalancing_lp, build_rebalancing_lp, path_var,
    project_onto_demand_set, routed_rate, shortest_only_paths, t_curve,
)
from pcnflow.graph import DemandMatrix, Topology, decompose, directed_edge_flows
from pcnflow.lp import solve_lp
from pcnflow.paths import enumerate_trails

from instances import tree_plus_shortest
from strategies import connected_topologies, demands


def all_trails(topo, demand, hops=10):
    return {k: enumerate_trails(topo, *k, hops) for k in demand}


def test_golden_lp_values(golden_topology, golden_demand):
    sol = solve_lp(build_balanced_lp(golden_topology, golden_demand, all_trails(golden_topology, golden_demand), 1.0))
    assert sol.objective == pytest.approx(8.0, abs=1e-6)
    assert sol.dual_objective == pytest.approx(8.0, abs=1e-6)
    short = shortest_only_paths(golden_topology, golden_demand)
    assert solve_lp(build_balanced_lp(golden_topology, golden_demand, short, 1.0)).objective == pytest.approx(5.0, abs=1e-6)


def test_golden_budget_curve(golden_topology, golden_demand):
    ps = all_trails(golden_topology, golden_demand)
    curve = t_curve(golden_topology, golden_demand, ps, 1.0, [0, 1, 2, 3, 4, 5])
    assert [t for _, t in curve] == pytest.approx([8, 9, 10, 11, 11.5, 12], abs=1e-6)


def test_lp_structure(golden_topology, golden_demand):
    ps = shortest_only_paths(golden_topology, golden_demand)
    inst = build_balanced_lp(golden_topology, golden_demand, ps, 2.0)
    assert len(inst.rows_tagged("demand")) == len(golden_demand)
    assert len(inst.rows_tagged("capacity")) == len(golden_topology.channels)
    assert len(inst.rows_tagged("balance")) == len(golden_topology.channels)
    assert all(r.rhs == 50.0 for r in inst.rows_tagged("capacity"))
    reb = build_rebalancing_lp(golden_topology, golden_demand, ps, 2.0, 0.5)
    assert len(reb.rows_tagged("balance")) == 2 * len(golden_topology.channels)
    assert len(reb.rebal) == 2 * len(golden_topology.channels)
    assert all(reb.objective[v] == -0.5 for v in reb.rebal)


def test_capacity_binds():
    topo = Topology.from_edges([(0, 1, 10.0)])
    d = DemandMatrix({(0, 1): math.inf, (1, 0): math.inf})
    ps = {(0, 1): [(0, 1)], (1, 0): [(1, 0)]}
    sol = solve_lp(build_balanced_lp(topo, d, ps, 0.5))
    assert sol.objective == pytest.approx(20.0)
    assert sol.rates[(0, 1)] == pytest.approx(10.0)


def test_rebalancing_pays_off_only_when_cheap():
    topo = Topology.from_edges([(0, 1, 100.0)])
    d = DemandMatrix({(0, 1): 3.0, (1, 0): 1.0})
    ps = {(0, 1): [(0, 1)], (1, 0): [(1, 0)]}
    cheap = solve_lp(build_rebalancing_lp(topo, d, ps, 1.0, 0.5))
    assert routed_rate(cheap) == pytest.approx(4.0)
    assert cheap.rebalancing[(0, 1)] == pytest.approx(2.0)
    assert cheap.objective == pytest.approx(3.0)
    dear = solve_lp(build_rebalancing_lp(topo, d, ps, 1.0, 2.0))
    assert routed_rate(dear) == pytest.approx(2.0)


@given(st.data())
def test_balanced_optimum_equals_circulation_value(data):
    topo = data.draw(connected_topologies(max_nodes=6, cap_range=(1000, 1000)))
    d = data.draw(demands(list(topo.nodes), max_edges=8))
    if not len(d):
        return
    sol = solve_lp(build_balanced_lp(topo, d, tree_plus_shortest(topo, d), 1.0))
    assert sol.objective == pytest.approx(decompose(d).value, abs=1e-6)


@given(st.data())
def test_solution_is_balanced_and_within_capacity(data):
    topo = data.draw(connected_topologies(max_nodes=5))
    d = data.draw(demands(list(topo.nodes), max_edges=6))
    if not len(d):
        return
    sol = solve_lp(build_balanced_lp(topo, d, tree_plus_shortest(topo, d), 1.0))
    load = directed_edge_flows(sol.rates)
    for c in topo.channels:
        f, r = load.get((c.u, c.v), 0.0), load.get((c.v, c.u), 0.0)
        assert f == pytest.approx(r, abs=1e-7)
        assert f + r <= c.capacity + 1e-7


@given(st.data())
def test_budget_curve_shape(data):
    topo = data.draw(connected_topologies(max_nodes=5, cap_range=(5, 20)))
    d = data.draw(demands(list(topo.nodes), max_edges=6))
    if not len(d):
        return
    grid = [0, 1, 2, 3, 4, 5]
    ts = [t for _, t in t_curve(topo, d, tree_plus_shortest(topo, d), 1.0, grid)]
    assert all(b >= a - 1e-6 for a, b in zip(ts, ts[1:]))
    assert all(ts[i] >= (ts[i - 1] + ts[i + 1]) / 2 - 1e-6 for i in range(1, len(ts) - 1))


def test_argument_errors(golden_topology, golden_demand):
    ps = shortest_only_paths(golden_topology, golden_demand)
    with pytest.raises(EmptyPathSet):
        build_balanced_lp(golden_topology, golden_demand, {}, 1.0)
    with pytest.raises(ValueError):
        build_balanced_lp(golden_topology, golden_demand, ps, 0.0)
    with pytest.raises(ValueError):
        build_rebalancing_lp(golden_topology, golden_demand, ps, 1.0, -1.0)
    with pytest.raises(ValueError):
        build_bounded_rebalancing_lp(golden_topology, golden_demand, ps, 1.0, -1.0)
    with pytest.raises(ValueError):
        t_curve(golden_topology, golden_demand, ps, 1.0, [0, 2, 1])
    bad = dict(ps)
    bad[(1, 2)] = [(1, 3)]
    with pytest.raises(ValueError):
        build_balanced_lp(golden_topology, golden_demand, bad, 1.0)
    bad[(1, 2)] = [(1, 2, 1, 2)]
    with pytest.raises(ValueError):
        build_balanced_lp(golden_topology, golden_demand, bad, 1.0)


def test_path_var_names():
    assert path_var((1, 2, 4)) == "x:1-2-4"


vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=6)


@given(vec, st.floats(0, 20, allow_nan=False), st.data())
def test_projection_is_closest_feasible_point(v, d, data):
    v = np.array(v)
    y = project_onto_demand_set(v, d)
    assert np.all(y >= -1e-12) and y.sum() <= d + 1e-9
    # variational inequality: (v - y) . (z - y) <= 0 for every feasible z
    raw = np.array(data.draw(st.lists(st.floats(0, 1), min_size=len(v), max_size=len(v))))
    z = raw / max(1.0, raw.sum()) * d
    assert np.dot(v - y, z - y) <= 1e-7


def test_projection_examples():
    assert project_onto_demand_set([1.0, 2.0], math.inf).tolist() == [1.0, 2.0]
    assert project_onto_demand_set([3.0, 1.0], 2.0).tolist() == pytest.approx([2.0, 0.0])
    assert project_onto_demand_set([2.0, 2.0], 2.0).tolist() == pytest.approx([1.0, 1.0])
    assert project_onto_demand_set([-1.0, 0.5], 0.0).tolist() == [0.0, 0.0]
