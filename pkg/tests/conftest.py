import numpy as np
import pytest

from volume_inference.config import EmbedConfig, EvalConfig, GenConfig, PipelineConfig, SimConfig, TrainConfig
from volume_inference.network import Node, RoadNetwork, RoadSegment
from volume_inference.scenario import Scenario, SensorConfig, generate_scenario
from volume_inference.trajectory import Trajectory, TrajectoryPoint, VolumeTensor


def line_network(k: int = 3, length: float = 100.0, speed: float = 10.0, monitored=(0, 1), lanes: int = 1) -> RoadNetwork:
    """k + 1 nodes on a line. Forward segment i runs node i -> i + 1, backward segment k + i runs i + 1 -> i."""
    nodes = [Node(id=i, x=i * length, y=0.0) for i in range(k + 1)]
    segments = [
        RoadSegment(id=i, from_node=i, to_node=i + 1, length=length, lanes=lanes, speed_limit=speed,
                    monitored=i in monitored)
        for i in range(k)
    ]
    segments += [
        RoadSegment(id=k + i, from_node=i + 1, to_node=i, length=length, lanes=lanes, speed_limit=speed,
                    monitored=k + i in monitored)
        for i in range(k)
    ]
    u_turns = {(i, k + i) for i in range(k)} | {(k + i, i) for i in range(k)}
    return RoadNetwork(nodes=nodes, segments=segments, turn_restrictions=u_turns, monitor_points=set(monitored))


def diamond_network(monitored=()) -> RoadNetwork:
    """Segment 0 splits into 1 -> 3 and 2 -> 4, both ending at node 3, where segment 5 starts."""
    nodes = [Node(id=0, x=0, y=0), Node(id=1, x=100, y=0), Node(id=2, x=200, y=100),
             Node(id=4, x=200, y=-100), Node(id=3, x=300, y=0), Node(id=5, x=400, y=0)]
    d = float(np.hypot(100, 100))
    ends = [(0, 1, 100.0), (1, 2, d), (1, 4, d), (2, 3, d), (4, 3, d), (3, 5, 100.0)]
    segments = [
        RoadSegment(id=i, from_node=a, to_node=b, length=length, speed_limit=10, monitored=i in monitored)
        for i, (a, b, length) in enumerate(ends)
    ]
    return RoadNetwork(nodes=nodes, segments=segments, monitor_points=set(monitored))


def trajectory(vehicle_id: int, points, kind: str = "incomplete", group: str | None = "sedan") -> Trajectory:
    """Trajectory from (segment_id, timestamp) pairs."""
    return Trajectory(
        vehicle_id=vehicle_id,
        kind=kind,
        group=group,
        points=[TrajectoryPoint(segment_id=s, timestamp=t) for s, t in points],
    )


def make_scenario(net: RoadNetwork, values: np.ndarray, interval_length: float = 300.0) -> Scenario:
    """A scenario around given ground-truth volumes, without trajectories."""
    values = np.asarray(values, dtype=float)
    return Scenario(
        network=net,
        ground_truth_volumes=VolumeTensor(values, np.ones_like(values, dtype=bool), interval_length),
        sensor_config=SensorConfig(taxi_fraction=0.2, monitored_fraction=0.25, monitor_seed=0),
        interval_length=interval_length,
        horizon=values.shape[1],
    )


def tiny_gen_config(**overrides) -> GenConfig:
    settings = dict(rows=2, cols=3, vehicles=30, horizon=12, interval_length=300.0, monitored_fraction=0.4,
                    taxi_fraction=0.3, seed=3)
    settings.update(overrides)
    return GenConfig(**settings)


def tiny_pipeline_config(output_dir, **overrides) -> PipelineConfig:
    settings = dict(
        seed=11,
        output_dir=str(output_dir),
        gen=tiny_gen_config(),
        sim=SimConfig(),
        train=TrainConfig(episodes=2, batch=4, hidden=[16, 16], memory_capacity=100),
        embed=EmbedConfig(dim=8, window=3, epochs=1, walks_per_node=2, walk_len=6),
        evaluation=EvalConfig(seeds=[0, 1], knn_k=2),
    )
    settings.update(overrides)
    return PipelineConfig(**settings)


@pytest.fixture
def line_net() -> RoadNetwork:
    return line_network()


@pytest.fixture(scope="session")
def tiny_scenario() -> Scenario:
    return generate_scenario(tiny_gen_config())
