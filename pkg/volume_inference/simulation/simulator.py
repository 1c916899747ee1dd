"""
A deterministic microscopic traffic simulator for recovering incomplete trajectories.

Every incomplete trajectory becomes one vehicle. The vehicle appears on its first observed segment at the first
observed time and drives toward each following observed segment along the fastest route under the current
traffic. Whenever it enters the segment of its next observation we log an arrival record comparing the
simulated relative arrival time with the observed one. The segments it passes on the way fill in the missing
part of the trajectory.

## How vehicles move
- Each lane of a segment is a queue; vehicles never overtake or change lanes. More lanes only means more room.
- Every micro step, speeds follow a safe-speed car-following rule: accelerate toward the limit, but never faster
  than what lets the vehicle stop behind its leader (or behind the segment end when the next segment is full).
- A vehicle's limit is the lower of its group's speed limit and the segment's limit. Group limits are the only
  knobs the outside world can turn (`apply_action`), one macro step at a time.
- With resync on, a vehicle that is more than `resync_grace` seconds late for its next observation is moved
  there, so one bad leg does not spoil the rest of the trajectory.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from volume_inference.config import SPEED_MAX, SPEED_MIN, VEHICLE_GROUPS, GroupId, SimConfig
from volume_inference.errors import EmptyInputError, RoutingError
from volume_inference.files import parse_model, read_document, write_document
from volume_inference.network import RoadNetwork, capacity
from volume_inference.simulation.routing import fastest_path
from volume_inference.trajectory import (
    Trajectory,
    TrajectoryPoint,
    TrajectorySet,
    trajectories_from_payload,
    trajectories_to_payload,
)

logger = logging.getLogger(__name__)

VehicleStatus = Literal["pending", "active", "arrived_all", "resynced"]
FEATURES_PER_SEGMENT = ("vehicle_count", "avg_traverse_time", "avg_speed", "avg_waiting_time")
RECOVERY_FILE_VERSION = 1

# Extra simulated time after the last observation when no horizon is given, seconds
HORIZON_MARGIN = 3600.0


#################################
# Types
#################################

class ArrivalRecord(BaseModel):
    """Observed vs simulated arrival at one itinerary point, both relative to the vehicle's first point."""
    vehicle_id: int = Field(..., description="Vehicle")
    point_index: int = Field(..., ge=0, description="Index j of the itinerary point")
    t_real: float = Field(..., ge=0, description="Observed relative arrival time, seconds")
    t_sim: float = Field(..., ge=0, description="Simulated relative arrival time, seconds")
    resynced: bool = Field(False, description="The vehicle was moved here because it was late")
    timed_out: bool = Field(False, description="The point was never reached before the horizon")


class SimReport(BaseModel):
    """Trajectories that could not become vehicles."""
    rejected: dict[int, str] = Field(default_factory=dict, description="Vehicle id -> reason")


@dataclass(slots=True)
class Vehicle:
    """Simulation state of one vehicle."""
    id: int
    group: GroupId
    itinerary: list[TrajectoryPoint]
    status: VehicleStatus = "pending"
    segment: int = -1
    lane: int = 0
    offset: float = 0.0
    speed: float = 0.0
    overflow: float = 0.0
    path: list[int] = field(default_factory=list)
    next_point: int = 1
    entry_time: float = 0.0
    stranded: bool = False
    entries: list[TrajectoryPoint] = field(default_factory=list)

    @property
    def spawn_time(self) -> float:
        return self.itinerary[0].timestamp

    @property
    def on_network(self) -> bool:
        return self.status in ("active", "resynced")

    def relative_real(self, j: int) -> float:
        return self.itinerary[j].timestamp - self.spawn_time


#################################
# Simulator
#################################

class Simulator:
    """Runs vehicles conditioned on incomplete trajectories. Create one with `new_sim`."""

    def __init__(
        self,
        net: RoadNetwork,
        vehicles: list[Vehicle],
        cfg: SimConfig,
        horizon_s: float,
        report: SimReport,
    ):
        self.net = net
        self.cfg = cfg
        self.vehicles = vehicles
        self.horizon_s = horizon_s
        self.report = report
        self.group_limits: dict[GroupId, float] = dict(cfg.group_speed_limits)
        self.step_index = 0
        self.records: list[ArrivalRecord] = []
        self.spawned = 0
        self.despawned = 0
        self.lanes: dict[int, list[list[Vehicle]]] = {seg.id: [[] for _ in range(seg.lanes)] for seg in net.segments}
        self._capacity = np.array([capacity(seg, cfg.min_gap) for seg in net.segments])
        self._pending = sorted(vehicles, key=lambda v: (v.spawn_time, v.id))
        self._step_records: list[ArrivalRecord] = []
        self._reset_stats()

    # ---------------------------------------- clock

    @property
    def now(self) -> float:
        return self.step_index * self.cfg.micro_step

    @property
    def finished(self) -> bool:
        if self.now >= self.horizon_s:
            return True
        return not self._pending and not any(v.on_network for v in self.vehicles)

    # ---------------------------------------- limits and speeds

    def vehicle_limit(self, vehicle: Vehicle, segment_id: int) -> float:
        return min(self.group_limits[vehicle.group], self.net.segments[segment_id].speed_limit)

    def occupancy(self, segment_id: int) -> int:
        return sum(len(lane) for lane in self.lanes[segment_id])

    def vehicles_on_network(self) -> int:
        return sum(len(lane) for lanes in self.lanes.values() for lane in lanes)

    def expected_time(self, segment_id: int, group: GroupId | None = None) -> float:
        """Expected traversal time: free speed discounted by how full the segment is."""
        seg = self.net.segments[segment_id]
        free = seg.speed_limit if group is None else min(seg.speed_limit, self.group_limits[group])
        load = self.occupancy(segment_id) / self._capacity[segment_id]
        return seg.length / (free * max(self.cfg.occupancy_floor, 1.0 - load))

    def route(self, from_segment: int, to_segment: int, group: GroupId | None = None) -> list[int]:
        """Fastest path under the current traffic, both ends included."""
        path, _ = fastest_path(self.net, from_segment, to_segment, lambda s: self.expected_time(s, group))
        return path

    def _plan_leg(self, vehicle: Vehicle) -> None:
        target = vehicle.itinerary[vehicle.next_point].segment_id
        try:
            if target != vehicle.segment:
                vehicle.path = self.route(vehicle.segment, target, vehicle.group)
                return
            # Observed twice in a row on the same segment: it has to leave and come back
            best: tuple[float, int, list[int]] | None = None
            own = self.expected_time(vehicle.segment, vehicle.group)
            for nxt in self.net.successors[vehicle.segment]:
                try:
                    path, cost = fastest_path(self.net, nxt, target, lambda s: self.expected_time(s, vehicle.group))
                except RoutingError:
                    continue
                label = (own + cost, len(path), [vehicle.segment] + path)
                if best is None or label < best:
                    best = label
            if best is None:
                raise RoutingError(vehicle.segment, target)
            vehicle.path = best[2]
        except RoutingError as e:
            logger.warning("Vehicle %d is stranded: %s", vehicle.id, e)
            vehicle.stranded = True
            vehicle.path = [vehicle.segment]

    # ---------------------------------------- control

    def apply_action(self, group: GroupId, delta: int) -> None:
        """Change one group's speed limit by delta (-1, 0, +1) m/s, clamped to the allowed range."""
        if group not in self.group_limits:
            raise ValueError(f"Unknown vehicle group {group!r}, expected one of {VEHICLE_GROUPS}")
        if delta not in (-1, 0, 1):
            raise ValueError(f"delta must be -1, 0, or +1, got {delta}")
        self.group_limits[group] = min(SPEED_MAX, max(SPEED_MIN, self.group_limits[group] + delta))

    # ---------------------------------------- lanes

    def _lane_space(self, segment_id: int) -> tuple[int, float]:
        """The lane with the most room at the segment start, and that room in meters."""
        best_lane, best_space = 0, -math.inf
        for k, lane in enumerate(self.lanes[segment_id]):
            space = lane[-1].offset if lane else math.inf
            if space > best_space:
                best_lane, best_space = k, space
        return best_lane, best_space

    def _enter(self, vehicle: Vehicle, segment_id: int, lane: int, offset: float, t: float) -> None:
        vehicle.segment = segment_id
        vehicle.lane = lane
        vehicle.offset = offset
        vehicle.entry_time = t
        self.lanes[segment_id][lane].append(vehicle)
        self._seen[segment_id].add(vehicle.id)
        vehicle.entries.append(TrajectoryPoint(segment_id=segment_id, offset=0.0, timestamp=t))

    def _leave(self, vehicle: Vehicle, t: float, traversed: bool = True) -> None:
        self.lanes[vehicle.segment][vehicle.lane].remove(vehicle)
        if traversed:
            self._traverse_sum[vehicle.segment] += t - vehicle.entry_time
            self._traverse_count[vehicle.segment] += 1

    # ---------------------------------------- arrivals

    def _arrive(self, vehicle: Vehicle, t: float, resynced: bool = False) -> None:
        j = vehicle.next_point
        record = ArrivalRecord(
            vehicle_id=vehicle.id,
            point_index=j,
            t_real=vehicle.relative_real(j),
            t_sim=t - vehicle.spawn_time,
            resynced=resynced,
        )
        self._step_records.append(record)
        self.records.append(record)
        vehicle.next_point += 1
        if vehicle.next_point < len(vehicle.itinerary):
            self._plan_leg(vehicle)
        else:
            vehicle.path = [vehicle.segment]

    def _spawn_due(self) -> None:
        now = self.now
        waiting: list[Vehicle] = []
        while self._pending and self._pending[0].spawn_time <= now:
            vehicle = self._pending.pop(0)
            first = vehicle.itinerary[0].segment_id
            lane, space = self._lane_space(first)
            if space < self.cfg.min_gap:
                waiting.append(vehicle)
                continue
            vehicle.status = "active"
            vehicle.speed = self.vehicle_limit(vehicle, first)
            self._enter(vehicle, first, lane, 0.0, now)
            self.spawned += 1
            record = ArrivalRecord(vehicle_id=vehicle.id, point_index=0, t_real=0.0, t_sim=0.0)
            self._step_records.append(record)
            self.records.append(record)
            if len(vehicle.itinerary) > 1:
                self._plan_leg(vehicle)
            else:
                vehicle.path = [first]
        # Blocked spawns retry next micro step, ahead of later arrivals
        self._pending[:0] = waiting

    def _resync_late(self) -> None:
        now = self.now
        for vehicle in self.vehicles:
            if not vehicle.on_network or vehicle.stranded or vehicle.next_point >= len(vehicle.itinerary):
                continue
            deadline = vehicle.spawn_time + vehicle.relative_real(vehicle.next_point) + self.cfg.resync_grace
            if now < deadline or now <= vehicle.entry_time:
                continue
            target = vehicle.path[-1]
            lane, space = self._lane_space(target)
            if space < self.cfg.min_gap:
                continue
            self._leave(vehicle, now, traversed=False)
            skipped = vehicle.path[1:-1]
            if skipped:
                stamps = np.linspace(vehicle.entry_time, now, len(skipped) + 2)[1:-1]
                for seg_id, stamp in zip(skipped, stamps):
                    vehicle.entries.append(TrajectoryPoint(segment_id=seg_id, offset=0.0, timestamp=float(stamp)))
            vehicle.speed = self.vehicle_limit(vehicle, target)
            vehicle.overflow = 0.0
            vehicle.status = "resynced"
            self._enter(vehicle, target, lane, 0.0, now)
            vehicle.path = [target]
            self._arrive(vehicle, now, resynced=True)

    # ---------------------------------------- motion

    def _safe_speed(self, v: float, v_leader: float, gap: float) -> float:
        """Krauss safe speed: the fastest speed that still lets the vehicle stop behind its leader."""
        tau, b = self.cfg.headway, self.cfg.max_decel
        return v_leader + (gap - v_leader * tau) / ((v + v_leader) / (2.0 * b) + tau)

    def _exit_open(self, vehicle: Vehicle) -> bool:
        if len(vehicle.path) < 2:
            return True
        _, space = self._lane_space(vehicle.path[1])
        return space >= self.cfg.min_gap

    def _move_lanes(self) -> list[Vehicle]:
        """Move every vehicle within its segment. Returns front vehicles that reached the segment end."""
        dt = self.cfg.micro_step
        at_end: list[Vehicle] = []
        for seg in self.net.segments:
            for lane in self.lanes[seg.id]:
                leader: Vehicle | None = None
                for vehicle in lane:
                    v_max = self.vehicle_limit(vehicle, seg.id)
                    v_free = min(vehicle.speed + self.cfg.max_accel * dt, v_max)
                    if leader is not None:
                        gap = leader.offset - self.cfg.min_gap - vehicle.offset
                        v_leader = leader.speed
                    elif self._exit_open(vehicle):
                        gap, v_leader = math.inf, v_max
                    else:
                        gap, v_leader = seg.length - vehicle.offset, 0.0
                    if math.isinf(gap):
                        v_new = v_free
                    else:
                        gap = max(0.0, gap)
                        v_new = max(0.0, min(v_free, self._safe_speed(vehicle.speed, v_leader, gap), gap / dt))
                    travel = v_new * dt
                    vehicle.speed = v_new
                    if vehicle.offset + travel >= seg.length and leader is None:
                        vehicle.overflow = vehicle.offset + travel - seg.length
                        vehicle.offset = seg.length
                        at_end.append(vehicle)
                    else:
                        vehicle.offset = min(vehicle.offset + travel, seg.length)
                    if v_new < self.cfg.stop_speed:
                        self._wait_sum[seg.id] += dt
                    leader = vehicle
        return at_end

    def _cross(self, at_end: list[Vehicle]) -> None:
        """Move vehicles at a segment end onto their next segment, or off the network."""
        t = self.now + self.cfg.micro_step
        for vehicle in at_end:
            if len(vehicle.path) < 2:
                self._leave(vehicle, t)
                vehicle.status = "arrived_all"
                self.despawned += 1
                continue
            nxt = vehicle.path[1]
            lane, space = self._lane_space(nxt)
            if space < self.cfg.min_gap:
                vehicle.speed = 0.0
                vehicle.overflow = 0.0
                continue
            self._leave(vehicle, t)
            offset = min(vehicle.overflow, space - self.cfg.min_gap, self.net.segments[nxt].length)
            vehicle.overflow = 0.0
            vehicle.path.pop(0)
            self._enter(vehicle, nxt, lane, offset, t)
            if len(vehicle.path) == 1 and not vehicle.stranded and vehicle.next_point < len(vehicle.itinerary):
                self._arrive(vehicle, t)

    def micro_step(self) -> None:
        self._spawn_due()
        if self.cfg.resync:
            self._resync_late()
        self._cross(self._move_lanes())
        self.step_index += 1

    # ---------------------------------------- macro steps and features

    def _reset_stats(self) -> None:
        m = self.net.m
        self._traverse_sum = np.zeros(m)
        self._traverse_count = np.zeros(m)
        self._wait_sum = np.zeros(m)
        self._seen: list[set[int]] = [set() for _ in range(m)]
        self._step_records = []
        for seg_id, lanes in getattr(self, "lanes", {}).items():
            for lane in lanes:
                self._seen[seg_id].update(v.id for v in lane)

    def features(self) -> np.ndarray:
        """State features of the last macro step: 4 values per segment, in segment order."""
        m = self.net.m
        out = np.zeros((m, 4))
        for seg_id, lanes in self.lanes.items():
            on_segment = [v for lane in lanes for v in lane]
            out[seg_id, 0] = len(on_segment)
            if on_segment:
                out[seg_id, 2] = sum(v.speed for v in on_segment) / len(on_segment)
            if self._seen[seg_id]:
                out[seg_id, 3] = self._wait_sum[seg_id] / len(self._seen[seg_id])
        traversed = self._traverse_count > 0
        out[traversed, 1] = self._traverse_sum[traversed] / self._traverse_count[traversed]
        return out.reshape(-1)

    def _fast_forward(self, end_index: int) -> None:
        """Skip empty micro steps up to the next spawn (or the end of the macro step)."""
        if self.vehicles_on_network():
            return
        if not self._pending:
            self.step_index = end_index
            return
        due = math.ceil(self._pending[0].spawn_time / self.cfg.micro_step)
        if due > self.step_index:
            self.step_index = min(due, end_index)

    def macro_step(self) -> tuple[np.ndarray, list[ArrivalRecord]]:
        """Advance one macro step.

        Returns:
            The state features of the step and the arrival records logged during it.
        """
        self._reset_stats()
        end_index = self.step_index + self.cfg.micro_steps_per_macro
        while self.step_index < end_index and self.now < self.horizon_s:
            self._fast_forward(end_index)
            if self.step_index >= end_index:
                break
            self.micro_step()
        return self.features(), list(self._step_records)

    def timeout_records(self) -> list[ArrivalRecord]:
        """Sentinel records for every itinerary point never reached, at the horizon."""
        out: list[ArrivalRecord] = []
        for vehicle in self.vehicles:
            start = 0 if vehicle.status == "pending" else vehicle.next_point
            for j in range(start, len(vehicle.itinerary)):
                t_sim = 0.0 if j == 0 else max(0.0, self.horizon_s - vehicle.spawn_time)
                out.append(ArrivalRecord(
                    vehicle_id=vehicle.id, point_index=j, t_real=vehicle.relative_real(j),
                    t_sim=t_sim, timed_out=True,
                ))
        return out

    def recovered(self) -> TrajectorySet:
        return [
            Trajectory(vehicle_id=v.id, points=list(v.entries), kind="recovered", group=v.group)
            for v in sorted(self.vehicles, key=lambda v: v.id)
            if v.entries
        ]


#################################
# Operations
#################################

def new_sim(
    net: RoadNetwork,
    incomplete: TrajectorySet,
    cfg: SimConfig,
    horizon_s: float | None = None,
    check_monitors: bool = True,
) -> Simulator:
    """Create a simulator with one pending vehicle per incomplete trajectory.

    Args:
        net: The road network.
        incomplete: Observed trajectories. Empty trajectories are skipped.
        cfg: Simulator settings, including the initial group speed limits.
        horizon_s: Simulated horizon. Falls back to `cfg.horizon_s`, then to the last observation plus a margin.
        check_monitors: Reject trajectories with points off the monitored segments.

    Returns:
        The simulator, with rejected trajectories listed in `sim.report`.
    """
    report = SimReport()
    rng = np.random.default_rng(cfg.seed)
    vehicles: list[Vehicle] = []
    for traj in sorted(incomplete, key=lambda t: t.vehicle_id):
        if not traj.points:
            continue
        off_monitor = [p.segment_id for p in traj.points if p.segment_id not in net.monitor_points]
        unknown = [p.segment_id for p in traj.points if not 0 <= p.segment_id < net.m]
        if unknown:
            report.rejected[traj.vehicle_id] = f"unknown segments {unknown}"
            continue
        if check_monitors and off_monitor:
            report.rejected[traj.vehicle_id] = f"points off the monitored segments {off_monitor}"
            continue
        group = traj.group or VEHICLE_GROUPS[int(rng.integers(len(VEHICLE_GROUPS)))]
        vehicles.append(Vehicle(id=traj.vehicle_id, group=group, itinerary=list(traj.points)))
    if report.rejected:
        logger.warning("Rejected %d trajectories that cannot be simulated", len(report.rejected))

    if horizon_s is None:
        horizon_s = cfg.horizon_s
    if horizon_s is None:
        last = max((v.itinerary[-1].timestamp for v in vehicles), default=0.0)
        horizon_s = last + cfg.resync_grace + HORIZON_MARGIN
    return Simulator(net, vehicles, cfg, horizon_s, report)


def macro_step(sim: Simulator) -> tuple[np.ndarray, list[ArrivalRecord]]:
    if sim.finished:
        raise ValueError("The simulation has already finished")
    return sim.macro_step()


def apply_action(sim: Simulator, group: GroupId, delta: int) -> None:
    sim.apply_action(group, delta)


def route(sim: Simulator, from_segment: int, to_segment: int, group: GroupId | None = None) -> list[int]:
    return sim.route(from_segment, to_segment, group)


def run_to_completion(sim: Simulator) -> tuple[TrajectorySet, list[ArrivalRecord]]:
    """Run until every vehicle is done or the horizon is reached.

    Returns:
        The recovered trajectories and one arrival record per itinerary point of every vehicle; points never
        reached get a timed-out record at the horizon.
    """
    while not sim.finished:
        sim.macro_step()
    records = sim.records + sim.timeout_records()
    records.sort(key=lambda r: (r.vehicle_id, r.point_index))
    timed_out = sum(r.timed_out for r in records)
    if timed_out:
        logger.warning("%d itinerary points were not reached before the horizon", timed_out)
    return sim.recovered(), records


def recovery_error(records: list[ArrivalRecord]) -> float:
    """Mean absolute difference between simulated and observed relative arrival times, seconds."""
    if not records:
        raise EmptyInputError("recovery_error needs at least one arrival record")
    return math.fsum(abs(r.t_sim - r.t_real) for r in records) / len(records)


#################################
# Files
#################################

def records_to_frame(records: list[ArrivalRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.vehicle_id, r.point_index, r.t_real, r.t_sim) for r in records],
        columns=["vehicle_id", "point_index", "t_real_s", "t_sim_s"],
    )


def features_to_frame(stream: list[np.ndarray]) -> pd.DataFrame:
    """One row per macro step and segment, for debugging."""
    rows = []
    for step, features in enumerate(stream):
        for seg_id, values in enumerate(np.asarray(features).reshape(-1, 4)):
            rows.append((step, seg_id, *values))
    return pd.DataFrame(rows, columns=["step", "segment_id", *FEATURES_PER_SEGMENT])


def save_recovery(path: str | Path, recovered: TrajectorySet, records: list[ArrivalRecord]) -> None:
    write_document(path, {
        "version": RECOVERY_FILE_VERSION,
        "trajectories": trajectories_to_payload(recovered),
        "arrivals": [r.model_dump(mode="json") for r in records],
    })


def load_recovery(path: str | Path) -> tuple[TrajectorySet, list[ArrivalRecord]]:
    data = read_document(path, RECOVERY_FILE_VERSION)
    trajectories = trajectories_from_payload(data.get("trajectories", []), f"{path}: trajectories")
    records = [parse_model(ArrivalRecord, item, f"{path}: arrivals[{k}]") for k, item in enumerate(data.get("arrivals", []))]
    return trajectories, records
