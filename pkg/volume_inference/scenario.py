"""
Synthetic scenarios: a road network, ground-truth traffic, and where the sensors sit.

`generate_scenario` lays out a planar grid of intersections (optionally crossed by a diagonal arterial), draws
vehicles with a departure-time profile, and drives them with the traffic simulator under hidden "true" group
speed limits. What every vehicle did becomes the ground truth; the downstream stages only ever see:
- dense trajectories of the taxis,
- incomplete trajectories of every vehicle, cut down to the monitored segments,
- volumes of the monitored segments.

## KEY TAKEAWAYS
- The same config and seed always give a byte-identical scenario file.
- Ground-truth volumes are counted from the ground-truth trajectories, never drawn separately.
"""
import logging
import math
from pathlib import Path

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from volume_inference.config import VEHICLE_GROUPS, GenConfig, GroupId, SimConfig, derive_seed
from volume_inference.errors import ScenarioParseError
from volume_inference.files import parse_model, read_document, write_document
from volume_inference.network import Node, RoadNetwork, RoadSegment, validate_network
from volume_inference.simulation.simulator import new_sim, run_to_completion
from volume_inference.trajectory import (
    Trajectory,
    TrajectoryPoint,
    TrajectorySet,
    VolumeTensor,
    count_volumes,
    cut_on_gaps,
    downsample_to_monitors,
    trajectories_from_payload,
    trajectories_to_payload,
)

logger = logging.getLogger(__name__)

SCENARIO_FILE_VERSION = 1


#################################
# Types
#################################

class SensorConfig(BaseModel):
    """How the observations were produced."""
    taxi_fraction: float = Field(..., ge=0, le=1, description="Share of vehicles with dense trajectories")
    monitored_fraction: float = Field(..., ge=0, le=1, description="Share of segments with a sensor")
    monitor_seed: int = Field(..., description="Seed used to place the sensors")


class VehicleProfile(BaseModel):
    """What is known about one vehicle besides its movements."""
    id: int
    group: GroupId
    taxi: bool = Field(False, description="Taxis report dense trajectories")


class Scenario(BaseModel):
    """A road network with ground-truth traffic and sensor placement."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    network: RoadNetwork
    ground_truth_trajectories: TrajectorySet = Field(default_factory=list, description="Dense movements of every vehicle")
    ground_truth_volumes: VolumeTensor
    sensor_config: SensorConfig
    vehicles: list[VehicleProfile] = Field(default_factory=list)
    true_group_limits: dict[GroupId, float] = Field(default_factory=dict, description="Hidden group limits, m/s")
    interval_length: float = Field(300.0, gt=0, description="Volume interval length, seconds")
    horizon: int = Field(..., ge=1, description="Number of volume intervals")
    skipped_vehicles: list[int] = Field(default_factory=list, description="Vehicles dropped for infeasible demand")


#################################
# Network Layout
#################################

def _is_major(a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Every other row and column of the grid is a major road."""
    if a[0] == b[0]:
        return a[0] % 2 == 0
    return a[1] % 2 == 0


def build_grid_network(cfg: GenConfig) -> RoadNetwork:
    """A bidirectional grid with U-turns forbidden.

    Args:
        cfg: Grid dimensions, block length, and road class settings.

    Returns:
        A network with 2 segments per street, before any sensor is placed.
    """
    grid = nx.grid_2d_graph(cfg.rows, cfg.cols)
    if cfg.diagonal_arterials:
        for k in range(min(cfg.rows, cfg.cols) - 1):
            grid.add_edge((k, k), (k + 1, k + 1), diagonal=True)

    node_id = {rc: rc[0] * cfg.cols + rc[1] for rc in grid.nodes}
    nodes = [
        Node(id=node_id[rc], x=rc[1] * cfg.block_length, y=rc[0] * cfg.block_length)
        for rc in sorted(grid.nodes, key=node_id.get)
    ]

    segments: list[RoadSegment] = []
    for u, v in sorted(tuple(sorted(edge, key=node_id.get)) for edge in grid.edges):
        diagonal = grid.edges[u, v].get("diagonal", False)
        major = diagonal or _is_major(u, v)
        length = cfg.block_length * (math.sqrt(2.0) if diagonal else 1.0)
        for a, b in ((u, v), (v, u)):
            segments.append(RoadSegment(
                id=len(segments),
                from_node=node_id[a],
                to_node=node_id[b],
                length=length,
                lanes=cfg.major_lanes if major else cfg.secondary_lanes,
                road_class="major" if major else "secondary",
                speed_limit=cfg.major_speed_limit if major else cfg.secondary_speed_limit,
            ))

    u_turns = {
        (a.id, b.id)
        for a in segments
        for b in segments
        if a.to_node == b.from_node and b.to_node == a.from_node
    }
    return RoadNetwork(nodes=nodes, segments=segments, turn_restrictions=u_turns)


def place_monitors(net: RoadNetwork, fraction: float, seed: int) -> RoadNetwork:
    """Put sensors on floor(fraction * m) segments sampled without replacement (at least 1, fewer than m)."""
    count = min(max(1, math.floor(fraction * net.m)), net.m - 1)
    rng = np.random.default_rng(seed)
    chosen = {int(i) for i in rng.choice(net.m, size=count, replace=False)}
    segments = [seg.model_copy(update={"monitored": seg.id in chosen}) for seg in net.segments]
    return net.model_copy(update={"segments": segments, "monitor_points": chosen})


#################################
# Demand
#################################

def departure_times(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """Departure times over the first 90% of the horizon, sorted."""
    end = 0.9 * cfg.horizon * cfg.interval_length
    if cfg.demand_profile == "uniform":
        times = rng.uniform(0.0, end, size=cfg.vehicles)
    else:
        # Morning and evening peaks over a uniform background
        peak = rng.random(cfg.vehicles)
        centers = np.where(peak < 0.4, end / 3.0, 0.8 * end)
        spread = end / 16.0
        times = np.where(
            peak < 0.8,
            rng.normal(centers, spread),
            rng.uniform(0.0, end, size=cfg.vehicles),
        )
    return np.sort(np.clip(np.round(times), 0.0, end))


def draw_demand(cfg: GenConfig, net: RoadNetwork, rng: np.random.Generator) -> tuple[list[VehicleProfile], TrajectorySet, list[int]]:
    """Vehicle profiles and one origin-destination trip per vehicle.

    Returns:
        The profiles of the feasible vehicles, their trips as 2-point trajectories, and the skipped vehicle ids.
    """
    shares = np.array([cfg.group_shares[g] for g in VEHICLE_GROUPS], dtype=float)
    groups = rng.choice(len(VEHICLE_GROUPS), size=cfg.vehicles, p=shares / shares.sum())
    taxis = set(rng.choice(cfg.vehicles, size=round(cfg.taxi_fraction * cfg.vehicles), replace=False).tolist())
    starts = departure_times(cfg, rng)

    profiles: list[VehicleProfile] = []
    trips: TrajectorySet = []
    skipped: list[int] = []
    for vehicle_id in range(cfg.vehicles):
        origin, destination = (int(s) for s in rng.choice(net.m, size=2, replace=False))
        if not nx.has_path(net.segment_graph, origin, destination):
            logger.warning("Vehicle %d: segment %d is unreachable from %d, skipped", vehicle_id, destination, origin)
            skipped.append(vehicle_id)
            continue
        group = VEHICLE_GROUPS[int(groups[vehicle_id])]
        profiles.append(VehicleProfile(id=vehicle_id, group=group, taxi=vehicle_id in taxis))
        t0 = float(starts[vehicle_id])
        trips.append(Trajectory(
            vehicle_id=vehicle_id,
            kind="incomplete",
            group=group,
            points=[
                TrajectoryPoint(segment_id=origin, timestamp=t0),
                TrajectoryPoint(segment_id=destination, timestamp=t0 + 1.0),
            ],
        ))
    if skipped:
        logger.warning("Skipped %d vehicles with infeasible demand", len(skipped))
    return profiles, trips, skipped


#################################
# Operations
#################################

def generate_scenario(cfg: GenConfig) -> Scenario:
    """Generate a synthetic scenario.

    Args:
        cfg: Grid, demand, sensor, and hidden speed-limit settings.

    Returns:
        A scenario whose ground truth comes from the traffic simulator under `cfg.true_group_limits`.
    """
    monitor_seed = derive_seed(cfg.seed, "monitors")
    net = place_monitors(build_grid_network(cfg), cfg.monitored_fraction, monitor_seed)
    violations = validate_network(net)
    if violations:
        raise ValueError(f"Generated network is invalid: {violations[0].message}")

    rng = np.random.default_rng(derive_seed(cfg.seed, "demand"))
    profiles, trips, skipped = draw_demand(cfg, net, rng)
    logger.info("Simulating ground truth for %d vehicles on %d segments", len(trips), net.m)

    # Ground truth drives straight to each destination; the trip's second timestamp is a placeholder
    truth_cfg = SimConfig(
        resync=False,
        group_speed_limits=dict(cfg.true_group_limits),
        horizon_s=cfg.horizon * cfg.interval_length,
        seed=derive_seed(cfg.seed, "truth"),
    )
    sim = new_sim(net, trips, truth_cfg, check_monitors=False)
    driven, _ = run_to_completion(sim)
    dense = [traj.model_copy(update={"kind": "dense"}) for traj in driven]

    volumes = count_volumes(dense, net, cfg.interval_length, cfg.horizon)
    return Scenario(
        network=net,
        ground_truth_trajectories=dense,
        ground_truth_volumes=volumes,
        sensor_config=SensorConfig(
            taxi_fraction=cfg.taxi_fraction,
            monitored_fraction=cfg.monitored_fraction,
            monitor_seed=monitor_seed,
        ),
        vehicles=profiles,
        true_group_limits=dict(cfg.true_group_limits),
        interval_length=cfg.interval_length,
        horizon=cfg.horizon,
        skipped_vehicles=skipped,
    )


# ----------------------------------------
# Views
# ----------------------------------------

def dense_trajectories(scenario: Scenario) -> TrajectorySet:
    """What the taxis report, cut wherever they went quiet for too long."""
    taxis = {v.id for v in scenario.vehicles if v.taxi}
    return cut_on_gaps([t for t in scenario.ground_truth_trajectories if t.vehicle_id in taxis])


def incomplete_trajectories(scenario: Scenario) -> TrajectorySet:
    """What the sensors report: every vehicle seen at least once on a monitored segment."""
    seen = (downsample_to_monitors(t, scenario.network) for t in scenario.ground_truth_trajectories)
    return [t for t in seen if t.points]


def observed_volumes(scenario: Scenario, segments=None) -> VolumeTensor:
    """Ground-truth volumes with only the given segments (default: the monitored ones) observed."""
    rows = sorted(scenario.network.monitor_points if segments is None else segments)
    return scenario.ground_truth_volumes.observe_rows(rows)


# ----------------------------------------
# Files
# ----------------------------------------

def _network_payload(net: RoadNetwork) -> dict:
    return {
        "nodes": [node.model_dump(mode="json") for node in net.nodes],
        "segments": [seg.model_dump(mode="json") for seg in net.segments],
        "turn_restrictions": [list(pair) for pair in sorted(net.turn_restrictions)],
        "monitor_points": sorted(net.monitor_points),
        "connections": None if net.connections is None else [list(pair) for pair in net.connections],
    }


def _volumes_payload(volumes: VolumeTensor) -> dict:
    return {
        "m": volumes.m,
        "n": volumes.n,
        "interval_seconds": volumes.interval_length,
        "data": volumes.values.tolist(),
        "mask": volumes.observed_mask.astype(int).tolist(),
        "dropped_events": volumes.dropped_events,
    }


def _volumes_from_payload(data: dict, where: str) -> VolumeTensor:
    try:
        values = np.asarray(data["data"], dtype=float).reshape(data["m"], data["n"])
        mask = np.asarray(data["mask"], dtype=bool).reshape(data["m"], data["n"])
        return VolumeTensor(values, mask, float(data["interval_seconds"]), int(data.get("dropped_events", 0)))
    except KeyError as e:
        raise ScenarioParseError(f"{where}: field '{e.args[0]}' is missing") from e
    except (TypeError, ValueError) as e:
        raise ScenarioParseError(f"{where}: {e}") from e


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    write_document(path, {
        "version": SCENARIO_FILE_VERSION,
        "network": _network_payload(scenario.network),
        "trajectories": trajectories_to_payload(scenario.ground_truth_trajectories),
        "volumes": _volumes_payload(scenario.ground_truth_volumes),
        "sensor_config": scenario.sensor_config.model_dump(mode="json"),
        "vehicles": [v.model_dump(mode="json") for v in scenario.vehicles],
        "true_group_limits": scenario.true_group_limits,
        "interval_length": scenario.interval_length,
        "horizon": scenario.horizon,
        "skipped_vehicles": scenario.skipped_vehicles,
    })


def load_scenario(path: str | Path) -> Scenario:
    """Read a scenario file.

    Args:
        path: File written by `save_scenario`.

    Returns:
        The scenario. Malformed files raise ScenarioParseError; other schema versions raise ScenarioVersionError.
    """
    data = read_document(path, SCENARIO_FILE_VERSION)
    for key in ("network", "volumes", "sensor_config", "horizon"):
        if key not in data:
            raise ScenarioParseError(f"{path}: field '{key}' is missing")

    network = parse_model(RoadNetwork, data["network"], f"{path}: network")
    violations = validate_network(network)
    if violations:
        raise ScenarioParseError(f"{path}: network is invalid: {violations[0].message}")

    return parse_model(Scenario, {
        "network": network,
        "ground_truth_trajectories": trajectories_from_payload(data.get("trajectories", []), f"{path}: trajectories"),
        "ground_truth_volumes": _volumes_from_payload(data["volumes"], f"{path}: volumes"),
        "sensor_config": data["sensor_config"],
        "vehicles": data.get("vehicles", []),
        "true_group_limits": data.get("true_group_limits", {}),
        "interval_length": data.get("interval_length", 300.0),
        "horizon": data["horizon"],
        "skipped_vehicles": data.get("skipped_vehicles", []),
    }, str(path))
