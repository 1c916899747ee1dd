import numpy as np
import pytest

from tests.conftest import make_scenario
from volume_inference.evaluation.baselines import (
    baseline_contextual_average,
    baseline_graph_ssl,
    baseline_linear_regression,
    baseline_spatial_knn,
    feature_kernel,
    geospatial_features,
)
from volume_inference.evaluation.metrics import EvalSplit
from volume_inference.network import Node, RoadNetwork, RoadSegment

# (length, lanes, major, speed limit) of each segment
SEGMENTS = [
    (100.0, 1, False, 10.0),
    (200.0, 2, True, 20.0),
    (150.0, 1, False, 14.0),
    (300.0, 2, True, 25.0),
    (120.0, 3, False, 12.0),
    (250.0, 1, True, 30.0),
    (180.0, 2, False, 16.0),
    (90.0, 1, True, 11.0),
]


def _varied_network() -> RoadNetwork:
    nodes = [Node(id=i, x=100.0 * i, y=0.0) for i in range(len(SEGMENTS) + 1)]
    segments = [
        RoadSegment(id=i, from_node=i, to_node=i + 1, length=length, lanes=lanes,
                    road_class="major" if major else "secondary", speed_limit=speed)
        for i, (length, lanes, major, speed) in enumerate(SEGMENTS)
    ]
    return RoadNetwork(nodes=nodes, segments=segments)


def test_spatial_knn_averages_the_nearest_training_segments(line_net):
    values = np.arange(18.0).reshape(6, 3)
    scenario = make_scenario(line_net, values)
    split = EvalSplit(train=[0, 2, 5], test=[1, 3, 4])
    out = baseline_spatial_knn(2, split, scenario)
    assert np.array_equal(out[[0, 2, 5]], values[[0, 2, 5]])
    # Segment 3 shares segment 0's centroid; segments 2 and 5 tie at 200 m and the smaller id wins
    assert np.allclose(out[3], (values[0] + values[2]) / 2)
    assert np.allclose(out[1], (values[0] + values[2]) / 2)
    with pytest.raises(ValueError):
        baseline_spatial_knn(4, split, scenario)


def test_contextual_average_uses_the_road_class():
    net = _varied_network()
    values = np.arange(16.0).reshape(8, 2)
    scenario = make_scenario(net, values)
    split = EvalSplit(train=[0, 1, 2, 3], test=[4, 5])
    out = baseline_contextual_average(split, scenario)
    assert np.allclose(out[4], (values[0] + values[2]) / 2)
    assert np.allclose(out[5], (values[1] + values[3]) / 2)


def test_contextual_average_falls_back_to_the_global_mean():
    net = _varied_network()
    values = np.arange(16.0).reshape(8, 2)
    scenario = make_scenario(net, values)
    out = baseline_contextual_average(EvalSplit(train=[0, 2], test=[1]), scenario)
    assert np.allclose(out[1], (values[0] + values[2]) / 2)


def test_linear_regression_recovers_an_exact_linear_relation():
    net = _varied_network()
    features = geospatial_features(net)
    coefficients = np.array([[0.1, 0.2], [2.0, -1.0], [5.0, 4.0], [0.5, 1.5]])
    values = features @ coefficients + np.array([3.0, 7.0])
    scenario = make_scenario(net, values)
    out = baseline_linear_regression(EvalSplit(train=[0, 1, 2, 3, 4, 5], test=[6, 7]), scenario)
    assert np.allclose(out, values, rtol=0, atol=1e-8)


def test_linear_regression_survives_a_rank_deficient_design(line_net):
    # Every segment of the line looks the same, so only the intercept is identifiable
    values = np.full((6, 2), 4.0)
    out = baseline_linear_regression(EvalSplit(train=[0, 1, 2], test=[3]), make_scenario(line_net, values))
    assert np.allclose(out, 4.0, atol=1e-4)


def test_graph_ssl_stays_within_the_observed_range():
    net = _varied_network()
    values = np.random.default_rng(0).uniform(5.0, 50.0, size=(8, 4))
    scenario = make_scenario(net, values)
    split = EvalSplit(train=[0, 1, 2, 3, 4], test=[5, 6, 7])
    out = baseline_graph_ssl(split, scenario)
    assert np.array_equal(out[split.train], values[split.train])
    train = values[split.train]
    assert np.all(out >= train.min(axis=0) - 1e-9)
    assert np.all(out <= train.max(axis=0) + 1e-9)


def test_feature_kernel_is_symmetric_without_self_loops():
    kernel = feature_kernel(geospatial_features(_varied_network()))
    assert np.allclose(kernel, kernel.T)
    assert np.all(np.diag(kernel) == 0.0)
    assert np.all((kernel > 0) & (kernel <= 1) | np.eye(len(kernel), dtype=bool))
