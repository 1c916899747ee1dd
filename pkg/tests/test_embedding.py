import numpy as np
import pytest
import scipy.sparse as sp

from volume_inference.config import EmbedConfig
from volume_inference.embedding import (
    EmbeddingTable,
    context_pairs,
    init_table,
    joint_train,
    load_embeddings,
    negative_sample,
    noise_distribution,
    save_embeddings,
    sgns_gradients,
    sgns_objective,
    sgns_step,
    similarity,
    train_on_graph,
)
from volume_inference.errors import EmbeddingError
from volume_inference.st_graph import STGraph


def _ring_graph(m: int = 4, n: int = 5, shift: int = 1) -> STGraph:
    """Each segment flows on to itself (weight 2) and to its ring neighbor (weight 1) in the next layer."""
    rows, cols, data = [], [], []
    for t in range(n - 1):
        for i in range(m):
            rows += [t * m + i, t * m + i]
            cols += [(t + 1) * m + i, (t + 1) * m + (i + shift) % m]
            data += [2.0, 1.0]
    weights = sp.coo_matrix((data, (rows, cols)), shape=(m * n, m * n)).tocsr()
    return STGraph(m, n, weights)


def _cfg(**overrides) -> EmbedConfig:
    settings = dict(dim=8, window=3, epochs=2, walks_per_node=3, walk_len=5, batch_pairs=32, seed=1)
    settings.update(overrides)
    return EmbedConfig(**settings)


def test_context_pairs():
    assert context_pairs([1, 2, 3], 1) == [(1, 2), (2, 1), (2, 3), (3, 2)]
    assert len(context_pairs([1, 2, 3, 4], 10)) == 12
    with pytest.raises(ValueError):
        context_pairs([1, 2], 0)


def test_noise_distribution_follows_frequency():
    noise = noise_distribution([[0, 1, 1], [1, 2]], size=4, exponent=0.75)
    expected = np.array([1.0, 3.0**0.75, 1.0, 0.0])
    assert np.allclose(noise, expected / expected.sum())
    with pytest.raises(EmbeddingError):
        noise_distribution([[3, 3]], size=4)


def test_negative_samples_avoid_the_excluded_node():
    noise = np.array([0.5, 0.3, 0.2, 0.0])
    rng = np.random.default_rng(0)
    draws = negative_sample(noise, 6, np.array([0, 1, 2, 0]), rng)
    assert draws.shape == (4, 6)
    assert not (draws == np.array([0, 1, 2, 0])[:, None]).any()
    assert not (draws == 3).any()
    single = negative_sample(noise, 5, 0, rng)
    assert single.shape == (5,) and 0 not in single


def test_sgns_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    u, u_c, u_z = rng.normal(size=6), rng.normal(size=6), rng.normal(size=(3, 6))
    grad_u, grad_c, grad_z = sgns_gradients(u, u_c, u_z)
    h = 1e-6
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        numeric_u = (sgns_objective(u + e, u_c, u_z) - sgns_objective(u - e, u_c, u_z)) / (2 * h)
        numeric_c = (sgns_objective(u, u_c + e, u_z) - sgns_objective(u, u_c - e, u_z)) / (2 * h)
        assert numeric_u == pytest.approx(grad_u[k], abs=1e-6)
        assert numeric_c == pytest.approx(grad_c[k], abs=1e-6)
        for z in range(3):
            shifted_up, shifted_down = u_z.copy(), u_z.copy()
            shifted_up[z, k] += h
            shifted_down[z, k] -= h
            numeric_z = (sgns_objective(u, u_c, shifted_up) - sgns_objective(u, u_c, shifted_down)) / (2 * h)
            assert numeric_z == pytest.approx(grad_z[z, k], abs=1e-6)


def test_sgns_step_raises_the_pair_objective():
    table = init_table(3, 2, 4, seed=0)
    table.context[:] = np.random.default_rng(1).normal(scale=0.1, size=table.context.shape)
    before = sgns_step(table, 0, 1, [2, 3], lr=0.1, weight=1.0)
    after = sgns_objective(table.center[0], table.context[1], table.context[[2, 3]])
    assert after > before
    with pytest.raises(EmbeddingError):
        sgns_step(table, 2, 2, [0], lr=0.1, weight=1.0)


def test_a_zero_weight_pair_changes_nothing():
    table = init_table(3, 2, 4, seed=0)
    center, context = table.center.copy(), table.context.copy()
    sgns_step(table, 0, 1, [2, 3], lr=0.1, weight=0.0)
    assert np.array_equal(table.center, center)
    assert np.array_equal(table.context, context)


@pytest.mark.parametrize("alpha, single", [(1.0, "dense"), (0.0, "recovered")])
def test_alpha_endpoints_train_on_one_graph_alone(alpha, single):
    graphs = {"dense": _ring_graph(shift=1), "recovered": _ring_graph(shift=3)}
    joint = joint_train(graphs["dense"], graphs["recovered"], _cfg(alpha=alpha))
    alone = train_on_graph(graphs[single], _cfg())
    assert np.array_equal(joint.center, alone.center)
    assert joint.objective_log == alone.objective_log


def test_training_improves_the_objective():
    table = train_on_graph(_ring_graph(), _cfg(epochs=10, lr=0.2, batch_pairs=16))
    assert len(table.objective_log) == 10
    assert table.objective_log[-1] > table.objective_log[0]
    assert np.isfinite(table.center).all()


def test_training_is_deterministic():
    a = joint_train(_ring_graph(shift=1), _ring_graph(shift=3), _cfg(alpha=0.5))
    b = joint_train(_ring_graph(shift=1), _ring_graph(shift=3), _cfg(alpha=0.5))
    assert np.array_equal(a.center, b.center)


def test_training_rejects_bad_graphs():
    with pytest.raises(EmbeddingError):
        joint_train(_ring_graph(m=4), _ring_graph(m=5), _cfg())
    empty = STGraph(4, 5, sp.csr_matrix((20, 20)))
    with pytest.raises(EmbeddingError):
        train_on_graph(empty, _cfg())


def test_table_lookup():
    table = EmbeddingTable(2, 3, np.arange(12.0).reshape(6, 2), np.zeros((6, 2)))
    assert np.array_equal(table.vector(1, 2), [10.0, 11.0])
    assert similarity(table, (0, 0), (1, 0)) == 0.0 * 2.0 + 1.0 * 3.0
    with pytest.raises(EmbeddingError):
        table.index(2, 0)


def test_embedding_files(tmp_path):
    table = init_table(3, 4, 5, seed=9)
    save_embeddings(table, tmp_path / "e.csv")
    loaded = load_embeddings(tmp_path / "e.csv")
    assert (loaded.m, loaded.n, loaded.dim) == (3, 4, 5)
    assert np.array_equal(loaded.center, table.center)
