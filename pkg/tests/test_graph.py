import math

import pytest
from hypothesis import given, strategies as st

from pcnflow.errors import EmptyFile, MalformedFile, NotACirculation, TreeNotSpanning
from pcnflow.graph import (
    BALANCE_TOL, Channel, DemandMatrix, Topology, bfs_tree, decompose, directed_edge_flows,
    edge_key, find_positive_cycle, greedy_cycle_removal, is_trail, read_demand, read_topology,
    spanning_tree_route, throughput, write_demand, write_topology,
)

from strategies import brute_force_circulation, circulations, connected_topologies, demands, nx_max_circulation


# ---- topology ----------------------------------------------------------------

def test_topology_normalizes_keys_and_sorts():
    t = Topology.from_edges([(3, 1), (2, 1)], capacity=5.0)
    assert t.edge_keys() == [(1, 2), (1, 3)]
    assert t.neighbors(1) == (2, 3)
    assert t.capacity(3, 1) == 5.0
    assert t.nodes == (1, 2, 3)


@pytest.mark.parametrize("edges", [
    [(1, 1)],
    [(1, 2), (2, 1)],
    [(1, 2, 0.0)],
    [(1, 2, 1.0, 0.0)],
    [(-1, 2)],
])
def test_topology_rejects_bad_channels(edges):
    with pytest.raises(ValueError):
        Topology.from_edges(edges)


def test_path_helpers():
    t = Topology.from_edges([(0, 1, 4.0, 0.01), (1, 2, 2.0, 0.02)])
    assert t.path_delay((0, 1, 2)) == pytest.approx(0.03)
    assert t.bottleneck((0, 1, 2)) == 2.0
    assert t.is_path((0, 1, 2)) and not t.is_path((0, 2))
    assert is_trail((0, 1, 2, 3, 1)) and not is_trail((0, 1, 0))
    assert t.is_connected()
    assert t.scaled(2.0).capacity(0, 1) == 8.0
    assert t.with_capacity(1.0).capacity(1, 2) == 1.0


def test_disconnected_graph():
    t = Topology((5,), (Channel(0, 1, 1.0, 0.1),))
    assert not t.is_connected()
    assert t.component_of(0) == {0, 1}


# ---- demand matrices ---------------------------------------------------------

def test_demand_drops_zeros_and_merges():
    d = DemandMatrix([((1, 2), 1.0), ((1, 2), 2.0), ((2, 1), 0.0)])
    assert dict(d) == {(1, 2): 3.0}
    assert len(d) == 1


@pytest.mark.parametrize("bad", [{(1, 1): 1.0}, {(1, 2): -1.0}, {(1, 2): math.nan}])
def test_demand_rejects_bad_entries(bad):
    with pytest.raises(ValueError):
        DemandMatrix(bad)


def test_demand_arithmetic():
    a = DemandMatrix({(1, 2): 1.0, (2, 1): 1.0})
    b = DemandMatrix({(1, 2): 1.0})
    assert dict(a - b) == {(2, 1): 1.0}
    assert (a + b)[(1, 2)] == 2.0
    assert a.is_circulation() and not b.is_circulation()
    assert b.imbalance() == {1: 1.0, 2: -1.0}
    assert a.scaled(3).total() == 6.0


# ---- decomposition -------------------------------------------------------------

def test_decompose_golden(golden_demand):
    dec = decompose(golden_demand)
    assert dec.value == pytest.approx(8.0, abs=1e-9)
    assert dec.dag.total() == pytest.approx(4.0, abs=1e-9)
    assert dec.circulation.is_circulation()


def test_greedy_can_be_suboptimal(golden_demand):
    # the first cycle found by DFS blocks a better combination
    assert greedy_cycle_removal(golden_demand).value < decompose(golden_demand).value


def test_decompose_rejects_infinite():
    with pytest.raises(ValueError):
        decompose({(1, 2): math.inf, (2, 1): 1.0})


def test_decompose_empty():
    dec = decompose({})
    assert dec.value == 0 and not dec.dag


@given(st.data())
def test_decompose_parts_are_consistent(data):
    nodes = list(range(data.draw(st.integers(2, 6))))
    d = data.draw(demands(nodes, integer=False))
    dec = decompose(d)
    assert dec.circulation.is_circulation(tol=1e-7)
    assert find_positive_cycle(dec.dag, tol=1e-7) is None
    for k, r in d.items():
        assert dec.circulation.get(k) + dec.dag.get(k) == pytest.approx(r, abs=1e-9)
        assert dec.circulation.get(k) <= r + 1e-9


@given(st.data())
def test_decompose_matches_network_simplex(data):
    nodes = list(range(data.draw(st.integers(2, 6))))
    d = data.draw(demands(nodes, max_weight=6))
    assert decompose(d).value == pytest.approx(nx_max_circulation(d), abs=1e-9)


@given(st.data())
def test_decompose_matches_enumeration_small(data):
    nodes = list(range(data.draw(st.integers(2, 5))))
    d = data.draw(demands(nodes, max_weight=3, max_edges=8))
    assert decompose(d).value == pytest.approx(brute_force_circulation(d), abs=1e-9)


@given(st.data())
def test_circulation_is_its_own_decomposition(data):
    c = data.draw(circulations(list(range(5))))
    dec = decompose(c)
    assert dec.value == pytest.approx(c.total())
    assert dec.dag.total() <= BALANCE_TOL * max(1, len(c))


# ---- tree routing ---------------------------------------------------------------

@given(st.data())
def test_spanning_tree_routing_is_balanced(data):
    topo = data.draw(connected_topologies())
    circ = data.draw(circulations(list(topo.nodes)))
    flows = spanning_tree_route(circ, topo, bfs_tree(topo))
    assert throughput(flows) == pytest.approx(circ.total())
    load = directed_edge_flows(flows)
    for (u, v), x in load.items():
        assert x == pytest.approx(load.get((v, u), 0.0), abs=1e-9)
    for p in flows:
        assert topo.is_path(p)


def test_tree_routing_rejects_non_circulation():
    topo = Topology.from_edges([(0, 1)])
    with pytest.raises(NotACirculation):
        spanning_tree_route({(0, 1): 1.0}, topo, [(0, 1)])


def test_tree_routing_rejects_bad_trees():
    topo = Topology.from_edges([(0, 1), (1, 2), (0, 2)])
    circ = {(0, 1): 1.0, (1, 0): 1.0, (1, 2): 1.0, (2, 1): 1.0}
    with pytest.raises(TreeNotSpanning):
        spanning_tree_route(circ, topo, [(0, 1)])          # misses node 2
    with pytest.raises(TreeNotSpanning):
        spanning_tree_route(circ, topo, [(0, 1), (1, 2), (0, 2)])  # has a cycle
    with pytest.raises(TreeNotSpanning):
        spanning_tree_route(circ, Topology.from_edges([(0, 1), (1, 2)]), [(0, 1), (0, 2)])


# ---- files ---------------------------------------------------------------------

def test_topology_file_round_trip(tmp_path, golden_topology):
    p = tmp_path / "t.txt"
    write_topology(golden_topology, p)
    assert read_topology(p) == golden_topology


def test_demand_file_round_trip(tmp_path, golden_demand):
    p = tmp_path / "d.txt"
    write_demand(golden_demand, p)
    assert read_demand(p) == golden_demand


def test_file_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# only a comment\n")
    with pytest.raises(EmptyFile):
        read_topology(p)
    p.write_text("1 2 x 30\n")
    with pytest.raises(MalformedFile) as exc:
        read_topology(p)
    assert exc.value.lineno == 1
    p.write_text("1 2\n")
    with pytest.raises(MalformedFile):
        read_demand(p)
    p.write_text("1 1 3\n")
    with pytest.raises(MalformedFile):
        read_demand(p)


def test_edge_key_order():
    assert edge_key(5, 2) == (2, 5) == edge_key(2, 5)
