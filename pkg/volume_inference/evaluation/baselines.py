"""
Baseline volume estimators.

Each baseline sees the true volumes of the training segments only and returns an m x n prediction matrix:
training rows hold their observed volumes, every other row is predicted.

1. Spatial kNN: mean of the k nearest training segments (by centroid distance) at each interval.
2. Contextual average: mean of the training segments of the same road class at each interval.
3. Linear regression: one least-squares fit per interval on geospatial features.
4. Graph SSL: harmonic propagation over a Gaussian-kernel graph of geospatial features, within each interval.
"""
import logging

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist, squareform

from volume_inference.evaluation.metrics import EvalSplit
from volume_inference.inference import InferenceProblem, MaskedSimilarityGraph, solve
from volume_inference.network import RoadNetwork
from volume_inference.scenario import Scenario

logger = logging.getLogger(__name__)

RIDGE = 1e-6


def _with_training_rows(scenario: Scenario, split: EvalSplit) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Empty prediction matrix with training rows filled in, plus the training ids and their volumes."""
    truth = scenario.ground_truth_volumes.values
    train = np.array(sorted(split.train), dtype=int)
    out = np.full_like(truth, np.nan, dtype=float)
    out[train] = truth[train]
    return out, train, truth[train]


def _targets(scenario: Scenario, train: np.ndarray) -> np.ndarray:
    return np.setdiff1d(np.arange(scenario.network.m), train)


# ----------------------------------------
# Spatial kNN
# ----------------------------------------

def baseline_spatial_knn(k: int, split: EvalSplit, scenario: Scenario) -> np.ndarray:
    """Mean volume of the k training segments nearest to each target segment.

    Equidistant candidates are taken in segment id order.
    """
    out, train, observed = _with_training_rows(scenario, split)
    if not 1 <= k <= train.size:
        raise ValueError(f"k must be between 1 and the {train.size} training segments, got {k}")
    centroids = scenario.network.centroids()
    for target in _targets(scenario, train):
        dist = np.linalg.norm(centroids[train] - centroids[target], axis=1)
        nearest = np.lexsort((train, dist))[:k]
        out[target] = observed[nearest].mean(axis=0)
    return out


# ----------------------------------------
# Contextual average
# ----------------------------------------

def baseline_contextual_average(split: EvalSplit, scenario: Scenario) -> np.ndarray:
    """Mean volume of training segments of the same road class, or of all of them when the class has none."""
    out, train, observed = _with_training_rows(scenario, split)
    segments = scenario.network.segments
    classes = np.array([segments[i].road_class for i in train])
    global_mean = observed.mean(axis=0)
    for target in _targets(scenario, train):
        road_class = segments[target].road_class
        same = classes == road_class
        if same.any():
            out[target] = observed[same].mean(axis=0)
        else:
            logger.warning("No training segment of class %s; segment %d gets the global mean", road_class, target)
            out[target] = global_mean
    return out


# ----------------------------------------
# Linear regression
# ----------------------------------------

def geospatial_features(net: RoadNetwork) -> np.ndarray:
    """Per segment: length, lanes, major-road indicator, speed limit."""
    return np.array(
        [[seg.length, seg.lanes, float(seg.road_class == "major"), seg.speed_limit] for seg in net.segments],
        dtype=float,
    ).reshape(-1, 4)


def fit_linear(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients for every column of Y. Rank-deficient designs get a small ridge term."""
    if np.linalg.matrix_rank(X) == X.shape[1]:
        return np.linalg.lstsq(X, Y, rcond=None)[0]
    return np.linalg.solve(X.T @ X + RIDGE * np.eye(X.shape[1]), X.T @ Y)


def baseline_linear_regression(split: EvalSplit, scenario: Scenario) -> np.ndarray:
    """One regression per interval from geospatial features (plus an intercept) to volume."""
    out, train, observed = _with_training_rows(scenario, split)
    features = geospatial_features(scenario.network)
    X = np.column_stack([features, np.ones(len(features))])
    coefficients = fit_linear(X[train], observed)
    targets = _targets(scenario, train)
    out[targets] = X[targets] @ coefficients
    return out


# ----------------------------------------
# Graph SSL
# ----------------------------------------

def feature_kernel(features: np.ndarray) -> np.ndarray:
    """Gaussian similarities exp(-d^2 / sigma^2) of standardized features, sigma the median pairwise distance."""
    spread = features.std(axis=0)
    z = (features - features.mean(axis=0)) / np.where(spread > 0, spread, 1.0)
    distances = pdist(z)
    positive = distances[distances > 0]
    sigma = float(np.median(positive)) if positive.size else 1.0
    kernel = squareform(np.exp(-(distances**2) / sigma**2))
    np.fill_diagonal(kernel, 0.0)
    return kernel


def baseline_graph_ssl(split: EvalSplit, scenario: Scenario, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Harmonic propagation within each interval over the feature kernel graph."""
    truth = scenario.ground_truth_volumes
    m, n = truth.m, truth.n
    kernel = sp.csr_matrix(feature_kernel(geospatial_features(scenario.network)))
    weights = sp.csr_matrix(sp.kron(sp.identity(n, format="csr"), kernel, format="csr"))
    observed = truth.observe_rows(split.train)
    problem = InferenceProblem(observed, MaskedSimilarityGraph(m, n, weights), tol=tol, max_iter=max_iter)
    return solve(problem).values
