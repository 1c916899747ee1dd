"""
Trajectories and traffic volumes.

A trajectory is a chronologically ordered list of points, each located on a road segment. Three kinds exist:
- dense: every segment the vehicle enters (GPS-equipped taxis),
- incomplete: only the monitored segments (camera observations),
- recovered: an incomplete trajectory completed into a full segment-level path by the simulator.

A traversal is one visit to a segment: a run of consecutive points on the same segment. Volumes count
traversals by the interval in which they enter the segment, using half-open intervals [t*L, (t+1)*L).
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from volume_inference.config import GroupId
from volume_inference.files import parse_model, read_document, write_document
from volume_inference.network import RoadNetwork

logger = logging.getLogger(__name__)

TrajectoryKind = Literal["dense", "incomplete", "recovered"]
TRAJECTORY_FILE_VERSION = 1

# Gaps strictly longer than this split a trajectory, seconds
DEFAULT_GAP_THRESHOLD = 1800.0


#################################
# Types
#################################

class TrajectoryPoint(BaseModel):
    """A location on the network at a moment in time."""
    segment_id: int = Field(..., description="Segment the point lies on")
    offset: float = Field(0.0, ge=0, description="Meters along the segment from its start")
    timestamp: float = Field(..., ge=0, description="Seconds since the scenario start")


class Trajectory(BaseModel):
    """One vehicle's points in chronological order."""
    vehicle_id: int = Field(..., description="Vehicle the points belong to")
    points: list[TrajectoryPoint] = Field(default_factory=list)
    kind: TrajectoryKind = Field(..., description="dense, incomplete, or recovered")
    group: GroupId | None = Field(None, description="Vehicle group when known")

    @model_validator(mode="after")
    def _check_order(self):
        for a, b in zip(self.points, self.points[1:]):
            if not b.timestamp > a.timestamp:
                raise ValueError(
                    f"Trajectory of vehicle {self.vehicle_id} has non-increasing timestamps {a.timestamp} -> {b.timestamp}"
                )
        return self


TrajectorySet = list[Trajectory]


@dataclass(eq=False)
class VolumeTensor:
    """Volumes per segment (rows) and interval (columns), with a mask of observed cells."""
    values: np.ndarray
    observed_mask: np.ndarray
    interval_length: float = 300.0
    dropped_events: int = field(default=0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.observed_mask = np.asarray(self.observed_mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.observed_mask.shape:
            raise ValueError(f"values {self.values.shape} and mask {self.observed_mask.shape} must be matching 2-D arrays")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Volume values must be finite")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def observe_rows(self, rows) -> "VolumeTensor":
        """A copy where only the given segments are observed; other cells are zeroed."""
        mask = np.zeros_like(self.observed_mask)
        mask[list(rows), :] = True
        return VolumeTensor(np.where(mask, self.values, 0.0), mask, self.interval_length)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VolumeTensor):
            return NotImplemented
        return (
            self.interval_length == other.interval_length
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.observed_mask, other.observed_mask)
        )


#################################
# Operations
#################################

def traversals(trajectory: Trajectory) -> list[TrajectoryPoint]:
    """The first point of every traversal.

    In dense and recovered trajectories a traversal is a run of consecutive points on the same segment. Sensors
    report each pass separately, so every point of an incomplete trajectory is its own traversal.
    """
    if trajectory.kind == "incomplete":
        return list(trajectory.points)
    out: list[TrajectoryPoint] = []
    for point in trajectory.points:
        if not out or point.segment_id != out[-1].segment_id:
            out.append(point)
    return out


def cut_on_gaps(trajectories: TrajectorySet, gap_threshold: float = DEFAULT_GAP_THRESHOLD) -> TrajectorySet:
    """Split trajectories wherever two consecutive points are more than `gap_threshold` seconds apart.

    Args:
        trajectories: The trajectories to split.
        gap_threshold: Largest gap kept inside one trajectory, seconds. A gap of exactly this size is kept.

    Returns:
        Pieces that partition each input's points, in input order. Single-point pieces are kept.
    """
    if not gap_threshold > 0:
        raise ValueError(f"gap_threshold must be positive, got {gap_threshold}")
    out: TrajectorySet = []
    for traj in trajectories:
        if not traj.points:
            out.append(traj)
            continue
        piece = [traj.points[0]]
        for prev, point in zip(traj.points, traj.points[1:]):
            if point.timestamp - prev.timestamp > gap_threshold:
                out.append(traj.model_copy(update={"points": piece}))
                piece = []
            piece.append(point)
        out.append(traj.model_copy(update={"points": piece}))
    return out


def downsample_to_monitors(dense: Trajectory, net: RoadNetwork) -> Trajectory:
    """What the sensors see of a dense trajectory: one point per traversal of a monitored segment, at entry.

    Args:
        dense: A dense trajectory.
        net: The network whose monitor points act as sensors.

    Returns:
        An incomplete trajectory, possibly empty.
    """
    if dense.kind != "dense":
        raise ValueError(f"Trajectory of vehicle {dense.vehicle_id} is {dense.kind}, expected dense")
    kept = [p for p in traversals(dense) if net.is_monitored(p.segment_id)]
    return Trajectory(vehicle_id=dense.vehicle_id, points=kept, kind="incomplete", group=dense.group)


def count_traversals(
    trajectories: TrajectorySet, m: int, interval_length: float, n: int
) -> tuple[np.ndarray, int]:
    """Count traversal entries per segment and interval.

    Returns:
        The m x n count matrix and the number of entries that fell outside [0, n * interval_length).
    """
    if not interval_length > 0:
        raise ValueError(f"interval_length must be positive, got {interval_length}")
    counts = np.zeros((m, n), dtype=float)
    dropped = 0
    for traj in trajectories:
        for point in traversals(traj):
            if not 0 <= point.segment_id < m:
                raise ValueError(f"Vehicle {traj.vehicle_id} references unknown segment {point.segment_id}")
            t = int(point.timestamp // interval_length)
            if t >= n:
                dropped += 1
                continue
            counts[point.segment_id, t] += 1
    return counts, dropped


def count_volumes(
    trajectories: TrajectorySet, net: RoadNetwork, interval_length: float, n: int
) -> VolumeTensor:
    """Traffic volume of every segment in every interval.

    Args:
        trajectories: Segment-referenced trajectories.
        net: The road network; its segment count gives the number of rows.
        interval_length: Interval length, seconds.
        n: Number of intervals.

    Returns:
        A fully observed volume tensor. Re-entering a segment later counts again.
    """
    counts, dropped = count_traversals(trajectories, net.m, interval_length, n)
    if dropped:
        logger.warning("Dropped %d traversal entries beyond the horizon of %d intervals", dropped, n)
    return VolumeTensor(counts, np.ones_like(counts, dtype=bool), interval_length, dropped_events=dropped)


#################################
# Files
#################################

def trajectories_to_frame(trajectories: TrajectorySet) -> pd.DataFrame:
    """Flatten trajectories into the CSV layout vehicle_id,kind,segment_id,offset_m,timestamp_s."""
    rows = [
        (traj.vehicle_id, traj.kind, p.segment_id, p.offset, p.timestamp)
        for traj in trajectories
        for p in traj.points
    ]
    return pd.DataFrame(rows, columns=["vehicle_id", "kind", "segment_id", "offset_m", "timestamp_s"])


def trajectories_to_payload(trajectories: TrajectorySet) -> list[dict]:
    return [traj.model_dump(mode="json") for traj in trajectories]


def trajectories_from_payload(items: list, where: str) -> TrajectorySet:
    return [parse_model(Trajectory, item, f"{where}[{k}]") for k, item in enumerate(items)]


def save_trajectories(trajectories: TrajectorySet, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        path.parent.mkdir(parents=True, exist_ok=True)
        trajectories_to_frame(trajectories).to_csv(path, index=False)
        return
    write_document(path, {"version": TRAJECTORY_FILE_VERSION, "trajectories": trajectories_to_payload(trajectories)})


def load_trajectories(path: str | Path) -> TrajectorySet:
    data = read_document(path, TRAJECTORY_FILE_VERSION)
    return trajectories_from_payload(data.get("trajectories", []), f"{path}: trajectories")
