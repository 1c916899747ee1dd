"""
Hourly greedy calibration of the group speed limits, the classic alternative to a learned policy.

Hour by hour, every group's limit is nudged by -1 or +1 m/s, one move at a time, as long as a move lowers the
arrival-time error of the observations that fall in that hour. Earlier hours keep the limits already chosen.
"""
import logging
import math

from pydantic import BaseModel, Field

from volume_inference.config import SPEED_MAX, SPEED_MIN, VEHICLE_GROUPS, GroupId, SimConfig
from volume_inference.network import RoadNetwork
from volume_inference.simulation.simulator import ArrivalRecord, new_sim, recovery_error, run_to_completion
from volume_inference.trajectory import TrajectorySet

logger = logging.getLogger(__name__)

HOUR_S = 3600.0


class LimitSchedule(BaseModel):
    """Group speed limits per hour of the simulation."""
    hour_s: float = Field(HOUR_S, gt=0, description="Length of one schedule slot, seconds")
    limits: list[dict[GroupId, float]] = Field(default_factory=list, description="Group limits of every slot")

    def at(self, t: float) -> dict[GroupId, float]:
        return self.limits[min(int(t // self.hour_s), len(self.limits) - 1)]


def run_schedule(
    net: RoadNetwork,
    incomplete: TrajectorySet,
    sim_cfg: SimConfig,
    schedule: LimitSchedule,
    horizon_s: float | None = None,
) -> tuple[TrajectorySet, list[ArrivalRecord]]:
    """Simulate with the group limits switched at every slot boundary."""
    sim = new_sim(net, incomplete, sim_cfg, horizon_s=horizon_s)
    while not sim.finished:
        sim.group_limits = dict(schedule.at(sim.now))
        sim.macro_step()
    return run_to_completion(sim)


def _hour_error(records: list[ArrivalRecord], spawn: dict[int, float], start: float, end: float) -> float | None:
    """Arrival error of the observations made in [start, end); None when there are none."""
    inside = [r for r in records if r.point_index > 0 and start <= spawn[r.vehicle_id] + r.t_real < end]
    return recovery_error(inside) if inside else None


def greedy_calibrate(
    net: RoadNetwork,
    incomplete: TrajectorySet,
    sim_cfg: SimConfig,
    horizon_s: float,
    hour_s: float = HOUR_S,
    max_rounds: int = 20,
) -> LimitSchedule:
    """Search each hour's group limits greedily.

    Args:
        net: The road network.
        incomplete: Observed trajectories.
        sim_cfg: Simulator settings; its group limits seed the first hour.
        horizon_s: Simulated horizon, seconds.
        hour_s: Slot length, seconds.
        max_rounds: Upper bound on accepted moves per slot.

    Returns:
        The calibrated schedule.
    """
    spawn = {t.vehicle_id: t.points[0].timestamp for t in incomplete if t.points}
    slots = max(1, math.ceil(horizon_s / hour_s))
    schedule = LimitSchedule(hour_s=hour_s, limits=[dict(sim_cfg.group_speed_limits)])

    for slot in range(slots):
        start, end = slot * hour_s, min((slot + 1) * hour_s, horizon_s)
        if slot > 0:
            schedule.limits.append(dict(schedule.limits[-1]))

        def error_with(limits: dict[GroupId, float]) -> float | None:
            trial = LimitSchedule(hour_s=hour_s, limits=[*schedule.limits[:-1], limits])
            _, records = run_schedule(net, incomplete, sim_cfg, trial, horizon_s=end)
            return _hour_error(records, spawn, start, end)

        best = error_with(schedule.limits[-1])
        if best is None:
            continue
        for _ in range(max_rounds):
            improved = False
            for group in VEHICLE_GROUPS:
                for delta in (-1, 1):
                    limits = dict(schedule.limits[-1])
                    limits[group] = min(SPEED_MAX, max(SPEED_MIN, limits[group] + delta))
                    if limits == schedule.limits[-1]:
                        continue
                    err = error_with(limits)
                    if err is not None and err < best:
                        best, schedule.limits[-1], improved = err, limits, True
            if not improved:
                break
        logger.info("Hour %d: limits %s, error %.2f s", slot, schedule.limits[-1], best)

    return schedule
