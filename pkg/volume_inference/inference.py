"""
Volume propagation: spread observed volumes to every other (segment, interval) cell.

Cells are related through "masked" similarities: the inner product of their embeddings, kept only for pairs of
road-adjacent segments (or the same segment) at most one interval apart. The unknown volumes then minimize

    sum over related pairs of  w * (x_a - x_b)^2

with the observed cells held fixed. The minimizer is harmonic: every unknown equals the weighted mean of its
neighbors. It solves the linear system L_uu x_u = W_uk x_k, which we relax with Gauss-Seidel (or Jacobi) sweeps
from pyamg until no cell moves by more than `tol` times the largest observed volume.

## KEY TAKEAWAYS
- Negative similarities are clamped to 0 so the objective stays convex; `clamp_negative=False` keeps them.
- Unknown cells with no path to any observed cell get the mean observed volume and are flagged as isolated.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pyamg.relaxation.relaxation import gauss_seidel, jacobi
from scipy.sparse.csgraph import connected_components

from volume_inference.config import InferenceConfig
from volume_inference.embedding import EmbeddingTable
from volume_inference.errors import InferenceError
from volume_inference.network import RoadNetwork
from volume_inference.st_graph import STGraph
from volume_inference.trajectory import VolumeTensor

logger = logging.getLogger(__name__)


#################################
# Types
#################################

@dataclass(eq=False)
class MaskedSimilarityGraph:
    """Symmetric non-negative weights between (segment, interval) cells, indexed t * m + i. No self-pairs."""
    m: int
    n: int
    weights: sp.csr_matrix

    def pairs(self) -> list[tuple[tuple[int, int], tuple[int, int], float]]:
        """Every stored pair once, as ((i, t), (j, t'), weight)."""
        upper = sp.triu(self.weights, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return [
            ((int(upper.row[k]) % self.m, int(upper.row[k]) // self.m),
             (int(upper.col[k]) % self.m, int(upper.col[k]) // self.m),
             float(upper.data[k]))
            for k in order
        ]

    def weight(self, a: tuple[int, int], b: tuple[int, int]) -> float:
        return float(self.weights[a[1] * self.m + a[0], b[1] * self.m + b[0]])


@dataclass(eq=False)
class InferenceProblem:
    """Volumes with their observed cells fixed, and the graph that relates all cells."""
    volumes: VolumeTensor
    graph: MaskedSimilarityGraph
    tol: float = 1e-8
    max_iter: int = 10_000
    mode: str = "gauss_seidel"
    track_objective: bool = False

    def __post_init__(self):
        if (self.volumes.m, self.volumes.n) != (self.graph.m, self.graph.n):
            raise InferenceError(
                f"Volumes are {self.volumes.m} x {self.volumes.n} but the graph covers {self.graph.m} x {self.graph.n}"
            )
        if self.mode not in ("gauss_seidel", "jacobi"):
            raise InferenceError(f"Unknown relaxation mode {self.mode!r}")


@dataclass(eq=False)
class InferenceResult:
    """Solved volumes plus solver diagnostics."""
    volumes: VolumeTensor
    isolated: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    objective_trace: list[float] = field(default_factory=list)


#################################
# Graph Construction
#################################

def _segment_pairs(net: RoadNetwork, spatial_mask: bool) -> np.ndarray:
    """Unordered segment pairs (i <= j) that may be related, as an (P, 2) array."""
    m = net.m
    if not spatial_mask:
        i, j = np.triu_indices(m)
        return np.column_stack([i, j])
    pairs = {(i, i) for i in range(m)}
    pairs.update((min(a, b), max(a, b)) for a, b in net.transition_pairs)
    return np.array(sorted(pairs), dtype=int).reshape(-1, 2)


def build_masked_graph(
    table: EmbeddingTable,
    net: RoadNetwork,
    n: int | None = None,
    spatial_mask: bool = True,
    temporal_window: int = 1,
    clamp_negative: bool = True,
) -> MaskedSimilarityGraph:
    """Similarity graph over (segment, interval) cells.

    Args:
        table: Embeddings of every cell.
        net: The road network; adjacency in either direction relates two segments.
        n: Number of intervals. Defaults to the table's.
        spatial_mask: Relate only adjacent segments (and a segment with itself). False relates every pair.
        temporal_window: Largest interval distance between related cells.
        clamp_negative: Replace negative inner products by 0.

    Returns:
        The symmetric weight matrix. Pairs with weight 0 are not stored.
    """
    m = net.m
    n = table.n if n is None else n
    if table.m != m or table.n < n:
        raise InferenceError(f"Embeddings cover {table.m} x {table.n} cells, expected {m} x {n}")

    seg_pairs = _segment_pairs(net, spatial_mask)
    ordered = np.vstack([seg_pairs, seg_pairs[seg_pairs[:, 0] != seg_pairs[:, 1]][:, ::-1]])
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    products: list[np.ndarray] = []
    for dt in range(min(temporal_window, n - 1) + 1):
        # Same interval: each unordered pair of distinct segments once. Across intervals: every ordered pair.
        base = seg_pairs[seg_pairs[:, 0] != seg_pairs[:, 1]] if dt == 0 else ordered
        # Per interval, so the unmasked case never holds every pair's vectors at once
        for t in range(n - dt):
            a_t, b_t = t * m + base[:, 0], (t + dt) * m + base[:, 1]
            rows.append(a_t)
            cols.append(b_t)
            products.append(np.einsum("pd,pd->p", table.center[a_t], table.center[b_t]))
    a = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
    b = np.concatenate(cols) if cols else np.zeros(0, dtype=int)

    values = np.concatenate(products) if products else np.zeros(0)
    if clamp_negative:
        values = np.maximum(values, 0.0)
    keep = values != 0.0
    upper = sp.coo_matrix((values[keep], (a[keep], b[keep])), shape=(m * n, m * n))
    weights = (upper + upper.T).tocsr()
    weights.eliminate_zeros()
    return MaskedSimilarityGraph(m, n, weights)


def graph_from_st_graphs(g_dense: STGraph, g_recovered: STGraph, alpha: float = 0.5) -> MaskedSimilarityGraph:
    """Similarities taken straight from the spatiotemporal edge weights, with no embedding step."""
    if (g_dense.m, g_dense.n) != (g_recovered.m, g_recovered.n):
        raise InferenceError("Spatiotemporal graphs cover different cells")
    directed = alpha * g_dense.weights + (1.0 - alpha) * g_recovered.weights
    weights = sp.csr_matrix(directed + directed.T)
    weights.setdiag(0.0)
    weights.eliminate_zeros()
    return MaskedSimilarityGraph(g_dense.m, g_dense.n, weights)


#################################
# Solving
#################################

def _flatten(values: np.ndarray) -> np.ndarray:
    """m x n matrix to cell order t * m + i."""
    return np.ascontiguousarray(values.T).reshape(-1)


def _unflatten(x: np.ndarray, m: int, n: int) -> np.ndarray:
    return x.reshape(n, m).T.copy()


def objective(problem: InferenceProblem, x: VolumeTensor | np.ndarray) -> float:
    """sum of w * (x_a - x_b)^2 over stored pairs, each unordered pair once."""
    values = x.values if isinstance(x, VolumeTensor) else np.asarray(x, dtype=float)
    flat = _flatten(values) if values.ndim == 2 else values
    upper = sp.triu(problem.graph.weights, k=1).tocoo()
    return float(np.sum(upper.data * (flat[upper.row] - flat[upper.col]) ** 2))


def harmonic_solve(problem: InferenceProblem) -> InferenceResult:
    """Minimize the objective over the unobserved cells.

    Args:
        problem: Volumes, graph, and solver settings.

    Returns:
        Fully populated volumes (the observed mask is kept) and solver diagnostics.
    """
    volumes = problem.volumes
    m, n = volumes.m, volumes.n
    known = _flatten(volumes.observed_mask)
    if not known.any():
        raise InferenceError("At least one observed cell is needed")
    x = _flatten(volumes.values).astype(float)
    isolated = np.zeros(m * n, dtype=bool)
    if known.all():
        return InferenceResult(VolumeTensor(volumes.values.copy(), volumes.observed_mask.copy(), volumes.interval_length), _unflatten(isolated, m, n))

    W = problem.graph.weights
    mean_observed = float(x[known].mean())
    _, labels = connected_components(W, directed=False)
    reaches_known = np.zeros(labels.max() + 1, dtype=bool)
    reaches_known[labels[known]] = True
    isolated = ~known & ~reaches_known[labels]
    if isolated.any():
        logger.warning("%d cells are not connected to any observed cell; they get the observed mean", int(isolated.sum()))
        x[isolated] = mean_observed

    unknown = np.flatnonzero(~known & ~isolated)
    result = InferenceResult(volumes, _unflatten(isolated, m, n))
    if unknown.size:
        fixed = np.flatnonzero(known)
        degree = np.asarray(W.sum(axis=1)).reshape(-1)
        A = sp.csr_matrix(sp.diags(degree[unknown]) - W[unknown][:, unknown])
        b = np.asarray(W[unknown][:, fixed] @ x[fixed]).reshape(-1)
        scale = float(np.max(np.abs(x[fixed]))) or 1.0
        xu = np.full(unknown.size, mean_observed)
        relax = gauss_seidel if problem.mode == "gauss_seidel" else jacobi

        change = np.inf
        iterations = 0
        while iterations < problem.max_iter:
            previous = xu.copy()
            relax(A, xu, b, iterations=1)
            iterations += 1
            change = float(np.max(np.abs(xu - previous)))
            if problem.track_objective:
                x[unknown] = xu
                result.objective_trace.append(objective(problem, x))
            if not np.all(np.isfinite(xu)):
                raise InferenceError(f"Relaxation diverged after {iterations} sweeps")
            if change <= problem.tol * scale:
                break
        x[unknown] = xu
        result.iterations = iterations
        result.residual = change
        result.converged = change <= problem.tol * scale
        if not result.converged:
            logger.warning("No convergence after %d sweeps; last change %.3e", iterations, change)

    result.volumes = VolumeTensor(_unflatten(x, m, n), volumes.observed_mask.copy(), volumes.interval_length)
    return result


def solve(problem: InferenceProblem) -> VolumeTensor:
    """Fill in every unobserved cell. See `harmonic_solve` for diagnostics."""
    return harmonic_solve(problem).volumes


def infer_volumes(
    table: EmbeddingTable, net: RoadNetwork, observed: VolumeTensor, cfg: InferenceConfig
) -> InferenceResult:
    """Build the masked graph from embeddings and solve, using the settings of `cfg`."""
    graph = build_masked_graph(
        table, net, observed.n,
        spatial_mask=cfg.spatial_mask, temporal_window=cfg.temporal_window, clamp_negative=cfg.clamp_negative,
    )
    return harmonic_solve(InferenceProblem(observed, graph, cfg.tol, cfg.max_iter, cfg.mode))


#################################
# Files
#################################

def volumes_to_frame(volumes: VolumeTensor) -> pd.DataFrame:
    """One row per cell: segment_id,interval,volume,was_observed."""
    segment, interval = np.meshgrid(np.arange(volumes.m), np.arange(volumes.n), indexing="ij")
    return pd.DataFrame({
        "segment_id": segment.reshape(-1),
        "interval": interval.reshape(-1),
        "volume": volumes.values.reshape(-1),
        "was_observed": volumes.observed_mask.reshape(-1),
    })


def save_volumes(volumes: VolumeTensor, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    volumes_to_frame(volumes).to_csv(path, index=False, float_format="%.17g")


def load_volumes(path: str | Path, interval_length: float = 300.0) -> VolumeTensor:
    frame = pd.read_csv(path)
    missing = {"segment_id", "interval", "volume", "was_observed"} - set(frame.columns)
    if missing:
        raise InferenceError(f"{path}: missing columns {sorted(missing)}")
    m, n = int(frame["segment_id"].max()) + 1, int(frame["interval"].max()) + 1
    if len(frame) != m * n:
        raise InferenceError(f"{path}: expected {m * n} rows for {m} segments x {n} intervals, got {len(frame)}")
    frame = frame.sort_values(["segment_id", "interval"])
    values = frame["volume"].to_numpy(dtype=float).reshape(m, n)
    mask = frame["was_observed"].astype(bool).to_numpy().reshape(m, n)
    return VolumeTensor(values, mask, interval_length)
