import numpy as np
import pytest

from tests.conftest import trajectory
from volume_inference.st_graph import build, load_graph, random_walks, save_graph


def _dense(vid, points):
    return trajectory(vid, points, kind="dense")


def test_moves_become_edges_into_the_next_layer(line_net):
    g = build([_dense(1, [(0, 0.0), (1, 100.0), (2, 400.0)])], line_net, 300.0, 3)
    # Both moves cross into the next layer, even the one that stays inside interval 0
    assert g.edges() == [(0, 0, 1, 1, 1.0), (1, 0, 2, 1, 1.0)]
    assert g.total_weight() == 2.0
    assert g.skipped == g.nonadjacent == 0


def test_repeated_moves_add_up(line_net):
    trajs = [_dense(k, [(0, 10.0 * k), (1, 100.0 + k)]) for k in range(3)]
    g = build(trajs, line_net, 300.0, 2)
    assert g.edges() == [(0, 0, 1, 1, 3.0)]


def test_long_and_nonadjacent_moves_are_dropped(line_net):
    trajs = [
        _dense(1, [(0, 0.0), (1, 700.0)]),  # spans two interval boundaries
        _dense(2, [(0, 650.0), (1, 700.0)]),  # would leave the last layer
        _dense(3, [(0, 0.0), (2, 50.0)]),  # not adjacent
    ]
    g = build(trajs, line_net, 300.0, 3)
    assert g.edge_count == 0
    assert g.skipped == 2
    assert g.nonadjacent == 1


def test_node_indexing(line_net):
    g = build([], line_net, 300.0, 4)
    assert g.size == 24
    assert g.node(2, 3) == 20
    assert g.identity(20) == (2, 3)


def test_random_walks_follow_edges_and_are_seeded(tiny_scenario):
    g = build(tiny_scenario.ground_truth_trajectories, tiny_scenario.network, 300.0, tiny_scenario.horizon)
    walks = random_walks(g, walk_len=5, walks_per_node=3, seed=7)
    assert walks == random_walks(g, walk_len=5, walks_per_node=3, seed=7)

    starts = np.flatnonzero(np.diff(g.weights.indptr) > 0)
    assert len(walks) == 3 * len(starts)
    for walk in walks:
        assert 1 <= len(walk) <= 5
        for a, b in zip(walk, walk[1:]):
            assert g.weights[a, b] > 0
        if len(walk) < 5:
            assert g.weights[walk[-1]].nnz == 0


def test_random_walks_need_a_length(line_net):
    with pytest.raises(ValueError):
        random_walks(build([], line_net, 300.0, 2), walk_len=0)


def test_graph_files(tmp_path, line_net):
    g = build([_dense(1, [(0, 0.0), (1, 100.0), (2, 400.0)])], line_net, 300.0, 3)
    save_graph(g, tmp_path / "g.csv")
    assert load_graph(tmp_path / "g.csv", 6, 3).edges() == g.edges()

    (tmp_path / "bad.csv").write_text("i,t,j,t_next,weight\n0,0,1,2,1.0\n")
    with pytest.raises(ValueError):
        load_graph(tmp_path / "bad.csv", 6, 3)
