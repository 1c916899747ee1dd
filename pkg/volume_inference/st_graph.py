"""
Spatiotemporal graphs: one layer of road segments per interval, with edges from each layer to the next.

Node (i, t) is segment i during interval t, stored at index t * m + i. An edge (i, t) -> (j, t + 1) counts the
trajectories that went from segment i, entered during interval t, straight on to segment j. A move that stays
inside interval t is still recorded toward layer t + 1, since edges only ever cross one layer boundary; a move
that spans more than one boundary is skipped.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from volume_inference.network import RoadNetwork, adjacent
from volume_inference.trajectory import TrajectorySet, traversals

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class STGraph:
    """A layered graph over (segment, interval) nodes with non-negative edge weights."""
    m: int
    n: int
    weights: sp.csr_matrix
    skipped: int = 0
    nonadjacent: int = 0

    @property
    def size(self) -> int:
        return self.m * self.n

    def node(self, segment_id: int, interval: int) -> int:
        return interval * self.m + segment_id

    def identity(self, node: int) -> tuple[int, int]:
        """(segment, interval) of a node index."""
        return node % self.m, node // self.m

    @property
    def edge_count(self) -> int:
        return self.weights.nnz

    def total_weight(self) -> float:
        return float(self.weights.sum())

    def edges(self) -> list[tuple[int, int, int, int, float]]:
        """Stored edges as (i, t, j, t_next, weight), by source node then target node."""
        coo = self.weights.tocoo()
        order = np.lexsort((coo.col, coo.row))
        out = []
        for k in order:
            i, t = self.identity(int(coo.row[k]))
            j, t_next = self.identity(int(coo.col[k]))
            out.append((i, t, j, t_next, float(coo.data[k])))
        return out


def build(trajectories: TrajectorySet, net: RoadNetwork, interval_length: float, n: int) -> STGraph:
    """Count consecutive traversals into a spatiotemporal graph.

    Args:
        trajectories: Dense or recovered trajectories.
        net: The road network.
        interval_length: Interval length, seconds.
        n: Number of intervals (layers).

    Returns:
        The graph, with counts of skipped and non-adjacent moves.
    """
    m = net.m
    rows: list[int] = []
    cols: list[int] = []
    skipped = nonadjacent = 0
    for traj in trajectories:
        visits = traversals(traj)
        for a, b in zip(visits, visits[1:]):
            if not adjacent(net, a.segment_id, b.segment_id):
                nonadjacent += 1
                continue
            t = int(a.timestamp // interval_length)
            t_b = int(b.timestamp // interval_length)
            if t_b - t not in (0, 1) or t + 1 >= n:
                skipped += 1
                continue
            rows.append(t * m + a.segment_id)
            cols.append((t + 1) * m + b.segment_id)

    data = np.ones(len(rows), dtype=float)
    # Duplicate coordinates are summed on conversion
    weights = sp.coo_matrix((data, (rows, cols)), shape=(m * n, m * n)).tocsr()
    weights.sum_duplicates()
    if skipped:
        logger.warning("Skipped %d moves that span more than one interval boundary or leave the horizon", skipped)
    if nonadjacent:
        logger.warning("Dropped %d moves between segments that are not adjacent", nonadjacent)
    return STGraph(m, n, weights, skipped, nonadjacent)


def random_walks(g: STGraph, walk_len: int = 20, walks_per_node: int = 10, seed: int = 0) -> list[list[int]]:
    """Forward random walks, choosing each next node with probability proportional to edge weight.

    Args:
        g: The graph.
        walk_len: Maximum number of nodes in a walk.
        walks_per_node: Walks started from every node that has out-edges.
        seed: Every start node gets its own stream derived from this seed.

    Returns:
        Walks as lists of node indices, grouped by start node in index order.
    """
    if walk_len < 1:
        raise ValueError(f"walk_len must be at least 1, got {walk_len}")
    indptr, indices, data = g.weights.indptr, g.weights.indices, g.weights.data
    starts = np.flatnonzero(np.diff(indptr) > 0)
    walks: list[list[int]] = []
    for start in starts:
        rng = np.random.default_rng([seed, int(start)])
        for _ in range(walks_per_node):
            walk = [int(start)]
            while len(walk) < walk_len:
                lo, hi = indptr[walk[-1]], indptr[walk[-1] + 1]
                if lo == hi:
                    break
                cumulative = np.cumsum(data[lo:hi])
                pick = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
                walk.append(int(indices[lo + min(pick, hi - lo - 1)]))
            walks.append(walk)
    return walks


#################################
# Files
#################################

def save_graph(g: STGraph, path: str | Path) -> None:
    """Edge list CSV with columns i,t,j,t_next,weight."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(g.edges(), columns=["i", "t", "j", "t_next", "weight"]).to_csv(path, index=False)


def load_graph(path: str | Path, m: int, n: int) -> STGraph:
    frame = pd.read_csv(path)
    missing = {"i", "t", "j", "t_next", "weight"} - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    if ((frame["t_next"] != frame["t"] + 1).any() or (frame["weight"] <= 0).any()
            or (frame[["i", "j"]] >= m).any(axis=None) or (frame["t_next"] >= n).any()):
        raise ValueError(f"{path}: edges must join consecutive layers of a {m} x {n} graph with positive weights")
    rows = (frame["t"] * m + frame["i"]).to_numpy()
    cols = (frame["t_next"] * m + frame["j"]).to_numpy()
    weights = sp.coo_matrix((frame["weight"].to_numpy(dtype=float), (rows, cols)), shape=(m * n, m * n)).tocsr()
    return STGraph(m, n, weights)
