import networkx as nx
import numpy as np
import pytest

from tests.conftest import diamond_network, line_network, tiny_gen_config
from volume_inference.errors import RoutingError
from volume_inference.network import RoadNetwork
from volume_inference.scenario import build_grid_network
from volume_inference.simulation.routing import fastest_path


def _oracle_cost(net: RoadNetwork, times: np.ndarray, a: int, b: int) -> float:
    graph = nx.DiGraph()
    for u, v in net.transition_pairs:
        graph.add_edge(u, v, weight=float(times[u]))
    return nx.dijkstra_path_length(graph, a, b)


def test_costs_match_a_dijkstra_oracle():
    net = build_grid_network(tiny_gen_config(rows=3, cols=4))
    rng = np.random.default_rng(0)
    for _ in range(20):
        times = rng.uniform(1.0, 60.0, size=net.m)
        a, b = (int(s) for s in rng.choice(net.m, size=2, replace=False))
        path, cost = fastest_path(net, a, b, lambda s: times[s])
        assert path[0] == a and path[-1] == b
        assert all(v in net.successors[u] for u, v in zip(path, path[1:]))
        assert cost == pytest.approx(_oracle_cost(net, times, a, b), rel=1e-12)
        assert cost == pytest.approx(sum(times[s] for s in path[:-1]), rel=1e-12)


def test_same_segment_is_a_zero_cost_path(line_net):
    assert fastest_path(line_net, 2, 2, lambda s: 5.0) == ([2], 0.0)


def test_equal_costs_break_toward_the_smaller_ids():
    path, cost = fastest_path(diamond_network(), 0, 5, lambda s: 10.0)
    assert path == [0, 1, 3, 5]
    assert cost == 30.0


def test_cheaper_branch_wins():
    times = {0: 10.0, 1: 50.0, 2: 5.0, 3: 10.0, 4: 10.0, 5: 10.0}
    path, cost = fastest_path(diamond_network(), 0, 5, times.__getitem__)
    assert path == [0, 2, 4, 5]
    assert cost == 25.0


def test_unreachable_target_raises():
    with pytest.raises(RoutingError) as info:
        fastest_path(diamond_network(), 5, 0, lambda s: 1.0)
    assert (info.value.from_segment, info.value.to_segment) == (5, 0)


def test_line_route_has_no_u_turns():
    net = line_network(k=3)
    path, _ = fastest_path(net, 0, 2, lambda s: 1.0)
    assert path == [0, 1, 2]
