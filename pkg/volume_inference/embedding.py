"""
Joint skip-gram embedding of the two spatiotemporal graphs.

Random walks over each graph are the "sentences"; nodes within `window` steps of each other are (center, context)
pairs. Skip-gram with negative sampling pushes the center vector u of a node toward the context vector u' of its
real neighbors and away from the context vectors of k sampled noise nodes:

    log sigmoid(u . u'_c) + sum_z log sigmoid(-u . u'_z)

Pairs from the dense-trajectory graph are weighted by alpha and pairs from the recovered-trajectory graph by
1 - alpha. Both graphs share one table of center vectors and one table of context vectors, since their nodes are
the same (segment, interval) pairs. Walks whose weight is 0 are left out entirely, so alpha = 1 trains exactly as
`train_on_graph` on the dense graph alone.

Pairs are updated in vectorized batches of `batch_pairs`: every pair of a batch sees the vectors as they were
at the start of the batch, and updates to the same row are summed.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from volume_inference.config import EmbedConfig
from volume_inference.errors import EmbeddingError
from volume_inference.logs import progress_disabled
from volume_inference.st_graph import STGraph, random_walks

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class EmbeddingTable:
    """Center and context vectors of every (segment, interval) node, indexed t * m + i."""
    m: int
    n: int
    center: np.ndarray
    context: np.ndarray
    objective_log: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.center.shape[1]

    def index(self, segment_id: int, interval: int) -> int:
        if not (0 <= segment_id < self.m and 0 <= interval < self.n):
            raise EmbeddingError(f"Node ({segment_id},{interval}) is outside the {self.m} x {self.n} table")
        return interval * self.m + segment_id

    def vector(self, segment_id: int, interval: int) -> np.ndarray:
        return self.center[self.index(segment_id, interval)]


#################################
# Pairs and Noise
#################################

def context_pairs(walk: list[int], window: int) -> list[tuple[int, int]]:
    """Every ordered (center, context) pair at most `window` positions apart."""
    if window < 1:
        raise ValueError(f"window must be at least 1, got {window}")
    pairs = []
    for a in range(len(walk)):
        for b in range(max(0, a - window), min(len(walk), a + window + 1)):
            if a != b:
                pairs.append((walk[a], walk[b]))
    return pairs


def noise_distribution(walks: list[list[int]], size: int, exponent: float = 0.75) -> np.ndarray:
    """Node frequencies in the walks, raised to `exponent` and normalized."""
    counts = np.bincount(np.concatenate([np.asarray(w, dtype=int) for w in walks]), minlength=size).astype(float)
    weights = np.where(counts > 0, counts**exponent, 0.0)
    if np.count_nonzero(weights) < 2:
        raise EmbeddingError("Negative sampling needs at least 2 distinct nodes in the walks")
    return weights / weights.sum()


def negative_sample(noise: np.ndarray, k: int, exclude, rng: np.random.Generator) -> np.ndarray:
    """k draws from the noise distribution, redrawing any that hit the excluded node.

    `exclude` can be one node id (returns shape (k,)) or an array of ids (returns shape (len(exclude), k), one
    row per excluded node).
    """
    exclude = np.asarray(exclude)
    shape = (k,) if exclude.ndim == 0 else (exclude.shape[0], k)
    if k == 0:
        return np.zeros(shape, dtype=int)
    cdf = np.cumsum(noise)
    cdf /= cdf[-1]
    if np.any(noise[exclude] >= 1.0 - 1e-12):
        raise EmbeddingError(f"Node {int(np.max(exclude))} holds all of the noise mass; nothing else can be sampled")
    target = exclude if exclude.ndim == 0 else exclude[:, None]
    draws = np.searchsorted(cdf, rng.random(shape), side="right")
    clash = draws == target
    while clash.any():
        draws[clash] = np.searchsorted(cdf, rng.random(int(clash.sum())), side="right")
        clash = draws == target
    return np.minimum(draws, len(noise) - 1)


#################################
# Objective
#################################

def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(_log_sigmoid(x))


def sgns_objective(u: np.ndarray, u_context: np.ndarray, u_negatives: np.ndarray) -> float:
    """log sigmoid(u . u'_c) + sum_z log sigmoid(-u . u'_z) for one pair."""
    return float(_log_sigmoid(u @ u_context) + _log_sigmoid(-(u_negatives @ u)).sum())


def sgns_gradients(
    u: np.ndarray, u_context: np.ndarray, u_negatives: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of `sgns_objective` with respect to u, u'_c, and each u'_z."""
    g_pos = 1.0 - _sigmoid(u @ u_context)
    g_neg = _sigmoid(u_negatives @ u)
    grad_u = g_pos * u_context - g_neg @ u_negatives
    return grad_u, g_pos * u, -g_neg[:, None] * u


def sgns_batch(
    table: EmbeddingTable,
    centers: np.ndarray,
    contexts: np.ndarray,
    negatives: np.ndarray,
    lr: float,
    weights: np.ndarray,
) -> np.ndarray:
    """Gradient ascent on a batch of pairs, each scaled by its weight.

    Args:
        table: Updated in place.
        centers: (B,) center nodes.
        contexts: (B,) context nodes.
        negatives: (B, k) noise nodes.
        lr: Learning rate.
        weights: (B,) per-pair weights.

    Returns:
        The (B,) objective values before the update.
    """
    u = table.center[centers]
    u_c = table.context[contexts]
    u_z = table.context[negatives]
    s_pos = np.einsum("bd,bd->b", u, u_c)
    s_neg = np.einsum("bkd,bd->bk", u_z, u)
    objective = _log_sigmoid(s_pos) + _log_sigmoid(-s_neg).sum(axis=1)

    scale = (lr * np.asarray(weights, dtype=float))[:, None]
    g_pos = (1.0 - _sigmoid(s_pos))[:, None]
    g_neg = _sigmoid(s_neg)
    grad_u = g_pos * u_c - np.einsum("bk,bkd->bd", g_neg, u_z)
    grad_c = g_pos * u
    grad_z = -g_neg[:, :, None] * u[:, None, :]

    step_u, step_c = scale * grad_u, scale * grad_c
    step_z = scale[:, :, None] * grad_z
    broken = ~(np.isfinite(step_u).all(axis=1) & np.isfinite(step_c).all(axis=1) & np.isfinite(step_z).all(axis=(1, 2)))
    if broken.any():
        bad = int(np.flatnonzero(broken)[0])
        raise EmbeddingError(f"Non-finite update for center {int(centers[bad])}, context {int(contexts[bad])}")

    np.add.at(table.center, centers, step_u)
    np.add.at(table.context, contexts, step_c)
    np.add.at(table.context, negatives.reshape(-1), step_z.reshape(-1, table.dim))
    return objective


def sgns_step(
    table: EmbeddingTable, center: int, context: int, negatives, lr: float, weight: float
) -> float:
    """Update one (center, context) pair. Returns the objective before the update."""
    if center == context:
        raise EmbeddingError(f"Center and context are the same node {center}")
    negatives = np.asarray(negatives, dtype=int).reshape(1, -1)
    return float(sgns_batch(table, np.array([center]), np.array([context]), negatives, lr, np.array([weight]))[0])


#################################
# Training
#################################

def init_table(m: int, n: int, dim: int, seed: int) -> EmbeddingTable:
    """Centers uniform in (-0.5/d, 0.5/d), contexts zero."""
    rng = np.random.default_rng(seed)
    center = rng.uniform(-0.5 / dim, 0.5 / dim, size=(m * n, dim))
    return EmbeddingTable(m, n, center, np.zeros((m * n, dim)))


def _corpus_pairs(walks: list[list[int]], window: int) -> tuple[np.ndarray, np.ndarray]:
    """`context_pairs` of every walk as (centers, contexts) arrays, grouped by offset instead of by position."""
    centers: list[np.ndarray] = []
    contexts: list[np.ndarray] = []
    for walk in walks:
        w = np.asarray(walk, dtype=int)
        for d in range(1, min(window, len(w) - 1) + 1):
            centers.extend((w[:-d], w[d:]))
            contexts.extend((w[d:], w[:-d]))
    if not centers:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    c, x = np.concatenate(centers), np.concatenate(contexts)
    keep = c != x
    return c[keep], x[keep]


def joint_train(g_dense: STGraph, g_recovered: STGraph | None, cfg: EmbedConfig) -> EmbeddingTable:
    """Train one embedding table on both graphs.

    Args:
        g_dense: Graph built from dense trajectories; its pairs weigh `cfg.alpha`.
        g_recovered: Graph built from recovered trajectories; its pairs weigh `1 - cfg.alpha`.
        cfg: Embedding settings.

    Returns:
        The trained table, with the mean pair objective of every epoch in `objective_log`.
    """
    if g_recovered is not None and (g_dense.m, g_dense.n) != (g_recovered.m, g_recovered.n):
        raise EmbeddingError(
            f"Graphs cover different node sets: {g_dense.m} x {g_dense.n} vs {g_recovered.m} x {g_recovered.n}"
        )
    m, n = g_dense.m, g_dense.n

    walks: list[list[int]] = []
    walk_weights: list[float] = []
    for graph, weight in ((g_dense, cfg.alpha), (g_recovered, 1.0 - cfg.alpha)):
        if graph is None or weight == 0.0:
            continue
        graph_walks = random_walks(graph, cfg.walk_len, cfg.walks_per_node, cfg.seed)
        walks.extend(graph_walks)
        walk_weights.extend([weight] * len(graph_walks))
    if not any(len(w) > 1 for w in walks):
        raise EmbeddingError("Nothing to embed: the graphs have no edges")

    noise = noise_distribution(walks, m * n, cfg.noise_exponent)
    table = init_table(m, n, cfg.dim, cfg.seed)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    negative_rng = np.random.default_rng([cfg.seed, 2])

    per_walk = [_corpus_pairs([w], cfg.window) for w in walks]
    total_pairs = cfg.epochs * sum(len(c) for c, _ in per_walk)
    processed = 0
    for epoch in tqdm(range(cfg.epochs), desc="epochs", disable=progress_disabled()):
        order = shuffle_rng.permutation(len(walks))
        centers = np.concatenate([per_walk[k][0] for k in order])
        contexts = np.concatenate([per_walk[k][1] for k in order])
        weights = np.concatenate([np.full(len(per_walk[k][0]), walk_weights[k]) for k in order])
        objective_sum = 0.0
        for lo in range(0, len(centers), cfg.batch_pairs):
            hi = min(lo + cfg.batch_pairs, len(centers))
            lr = cfg.lr - (cfg.lr - cfg.lr_min) * processed / total_pairs
            negatives = negative_sample(noise, cfg.negatives, contexts[lo:hi], negative_rng)
            objective_sum += float(sgns_batch(
                table, centers[lo:hi], contexts[lo:hi], negatives, lr, weights[lo:hi]
            ).sum())
            processed += hi - lo
        table.objective_log.append(objective_sum / max(1, len(centers)))
        logger.debug("Epoch %d: mean objective %.5f", epoch, table.objective_log[-1])
    return table


def train_on_graph(g: STGraph, cfg: EmbedConfig) -> EmbeddingTable:
    """Embed a single graph; the same as `joint_train` with the other graph weighted 0."""
    return joint_train(g, None, cfg.model_copy(update={"alpha": 1.0}))


def similarity(table: EmbeddingTable, a: tuple[int, int], b: tuple[int, int]) -> float:
    """Inner product of the center vectors of two (segment, interval) nodes."""
    return float(table.vector(*a) @ table.vector(*b))


#################################
# Files
#################################

def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """CSV rows segment_id,interval,u0..u{d-1}. Context vectors are not kept."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    nodes = np.arange(table.m * table.n)
    frame = pd.DataFrame(table.center, columns=[f"u{k}" for k in range(table.dim)])
    frame.insert(0, "interval", nodes // table.m)
    frame.insert(0, "segment_id", nodes % table.m)
    frame.to_csv(path, index=False, float_format="%.17g")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    frame = pd.read_csv(path)
    if not {"segment_id", "interval"} <= set(frame.columns):
        raise EmbeddingError(f"{path}: columns segment_id and interval are required")
    m, n = int(frame["segment_id"].max()) + 1, int(frame["interval"].max()) + 1
    if len(frame) != m * n:
        raise EmbeddingError(f"{path}: expected {m * n} rows for {m} segments x {n} intervals, got {len(frame)}")
    frame = frame.sort_values(["interval", "segment_id"])
    center = frame[[c for c in frame.columns if c.startswith("u")]].to_numpy(dtype=float)
    return EmbeddingTable(m, n, center, np.zeros_like(center))
