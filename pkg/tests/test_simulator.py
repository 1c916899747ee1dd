import numpy as np
import pytest

from tests.conftest import diamond_network, line_network, trajectory
from volume_inference.config import SimConfig
from volume_inference.errors import EmptyInputError
from volume_inference.scenario import incomplete_trajectories
from volume_inference.simulation.simulator import (
    FEATURES_PER_SEGMENT,
    ArrivalRecord,
    features_to_frame,
    load_recovery,
    macro_step,
    new_sim,
    records_to_frame,
    recovery_error,
    run_to_completion,
    save_recovery,
)

LIMITS = {"sedan": 22.0, "suv": 20.0, "truck": 18.0}


def _long_line(monitored=(0, 1)):
    return line_network(k=3, length=1000.0, speed=30.0, monitored=monitored)


def test_free_flow_arrival_matches_hand_kinematics():
    # 22 m/s from the spawn on: 1000 m takes 46 whole steps (22 * 45 < 1000 <= 22 * 46)
    sim = new_sim(_long_line(), [trajectory(1, [(0, 0.0), (1, 46.0)])], SimConfig(group_speed_limits=LIMITS))
    recovered, records = run_to_completion(sim)
    assert [(r.point_index, r.t_sim) for r in records] == [(0, 0.0), (1, 46.0)]
    assert recovery_error(records) == 0.0
    assert [(p.segment_id, p.timestamp) for p in recovered[0].points] == [(0, 0.0), (1, 46.0)]
    assert sim.spawned == sim.despawned == 1


def test_a_slower_group_arrives_later():
    cfg = SimConfig(group_speed_limits=LIMITS)
    sim = new_sim(_long_line(), [trajectory(1, [(0, 0.0), (1, 46.0)], group="truck")], cfg)
    _, records = run_to_completion(sim)
    # 18 m/s: 18 * 55 < 1000 <= 18 * 56
    assert records[1].t_sim == 56.0


def test_late_vehicle_is_resynced_to_its_next_observation():
    cfg = SimConfig(group_speed_limits=LIMITS, resync_grace=5.0)
    sim = new_sim(_long_line(monitored=(0, 2)), [trajectory(1, [(0, 0.0), (2, 10.0)])], cfg)
    recovered, records = run_to_completion(sim)
    late = records[1]
    assert late.resynced and not late.timed_out
    assert late.t_sim == 15.0
    assert [(p.segment_id, p.timestamp) for p in recovered[0].points] == [(0, 0.0), (1, 7.5), (2, 15.0)]


def test_unreached_points_time_out_at_the_horizon():
    cfg = SimConfig(group_speed_limits=LIMITS, resync=False)
    sim = new_sim(_long_line(monitored=(0, 2)), [trajectory(1, [(0, 0.0), (2, 500.0)])], cfg, horizon_s=60.0)
    _, records = run_to_completion(sim)
    assert records[1].timed_out
    assert records[1].t_sim == 60.0
    assert records[1].t_real == 500.0


def test_unreachable_observation_strands_the_vehicle():
    cfg = SimConfig(group_speed_limits=LIMITS)
    # Segment 3 runs back toward node 0; with U-turns forbidden nothing leads there from segment 0
    sim = new_sim(_long_line(monitored=(0, 3)), [trajectory(1, [(0, 0.0), (3, 50.0)])], cfg, horizon_s=300.0)
    _, records = run_to_completion(sim)
    assert sim.vehicles[0].stranded
    assert records[1].timed_out


def test_trajectories_off_the_monitors_are_rejected():
    sim = new_sim(_long_line(), [trajectory(7, [(0, 0.0), (2, 40.0)])], SimConfig())
    assert 7 in sim.report.rejected
    assert sim.vehicles == []


def test_apply_action_clamps_and_validates():
    sim = new_sim(_long_line(), [], SimConfig(group_speed_limits={"sedan": 40.0, "suv": 1.0, "truck": 10.0}))
    sim.apply_action("sedan", 1)
    sim.apply_action("suv", -1)
    sim.apply_action("truck", 1)
    assert sim.group_limits == {"sedan": 40.0, "suv": 1.0, "truck": 11.0}
    with pytest.raises(ValueError):
        sim.apply_action("bus", 1)
    with pytest.raises(ValueError):
        sim.apply_action("sedan", 2)


def test_route_follows_the_line():
    sim = new_sim(_long_line(), [], SimConfig())
    assert sim.route(0, 2) == [0, 1, 2]


def test_macro_step_on_a_finished_simulation_raises():
    sim = new_sim(_long_line(), [trajectory(1, [(0, 0.0)])], SimConfig(group_speed_limits=LIMITS), horizon_s=60.0)
    features, records = macro_step(sim)
    assert features.shape == (4 * sim.net.m,)
    assert [r.point_index for r in records] == [0]
    assert sim.finished
    with pytest.raises(ValueError):
        macro_step(sim)


def _replay(scenario, steps: int = 60):
    sim = new_sim(
        scenario.network, incomplete_trajectories(scenario), SimConfig(seed=1),
        horizon_s=scenario.horizon * scenario.interval_length,
    )
    stream, records = [], []
    for _ in range(steps):
        if sim.finished:
            break
        features, arrived = sim.macro_step()
        stream.append(features)
        records.extend(arrived)
        assert sim.spawned - sim.despawned == sim.vehicles_on_network()
        assert features[0::4].sum() == sim.vehicles_on_network()
    return stream, records


def test_simulation_is_deterministic_and_conserves_vehicles(tiny_scenario):
    stream_a, records_a = _replay(tiny_scenario)
    stream_b, records_b = _replay(tiny_scenario)
    assert len(stream_a) == len(stream_b) > 0
    assert all(np.array_equal(a, b) for a, b in zip(stream_a, stream_b))
    assert records_a == records_b


def test_recovery_error_needs_records():
    with pytest.raises(EmptyInputError):
        recovery_error([])
    records = [ArrivalRecord(vehicle_id=1, point_index=1, t_real=10.0, t_sim=14.0),
               ArrivalRecord(vehicle_id=2, point_index=1, t_real=10.0, t_sim=8.0)]
    assert recovery_error(records) == 3.0


def test_recovery_files_and_frames(tmp_path):
    sim = new_sim(_long_line(), [trajectory(1, [(0, 0.0), (1, 46.0)])], SimConfig(group_speed_limits=LIMITS))
    recovered, records = run_to_completion(sim)
    save_recovery(tmp_path / "recovered.json", recovered, records)
    assert load_recovery(tmp_path / "recovered.json") == (recovered, records)
    assert list(records_to_frame(records).columns) == ["vehicle_id", "point_index", "t_real_s", "t_sim_s"]
    frame = features_to_frame([np.zeros(4 * 6)])
    assert list(frame.columns) == ["step", "segment_id", *FEATURES_PER_SEGMENT]
    assert len(frame) == 6


def test_lone_vehicle_crosses_at_constant_speed():
    net = line_network(k=2, length=600.0, speed=10.0, monitored=(0, 1))
    sim = new_sim(net, [trajectory(1, [(0, 0.0), (1, 60.0)])], SimConfig(group_speed_limits=LIMITS))
    _, records = run_to_completion(sim)
    # The segment limit of 10 m/s binds below the group limit
    assert records[1].t_sim == 60.0


def test_every_trajectory_gets_a_vehicle_and_an_idle_network_has_zero_features():
    trajs = [trajectory(k, [(0, 100.0 * k), (1, 100.0 * k + 50.0)]) for k in range(1, 4)]
    sim = new_sim(_long_line(), trajs, SimConfig())
    assert len(sim.vehicles) == 3
    assert not sim.finished
    assert not sim.features().any()


def test_follower_behind_a_stopped_leader_waits():
    net = line_network(k=3, length=100.0, speed=10.0, monitored=(0, 1, 2))
    # Segment 1 crawls below the stop speed, so its only vehicle blocks the way in
    net.segments[1].speed_limit = 0.05
    leader = trajectory(1, [(1, 0.0), (2, 500.0)])
    follower = trajectory(2, [(0, 0.0), (1, 20.0)])
    sim = new_sim(net, [leader, follower], SimConfig(resync=False), horizon_s=600.0)
    features, _ = macro_step(sim)
    waiting = features[3::4]
    assert waiting[0] > 0
    assert sim.vehicles[1].segment == 0
    assert sim.vehicles[1].speed < sim.cfg.stop_speed


def test_congestion_moves_the_route_to_the_other_branch():
    net = diamond_network()
    sim = new_sim(net, [trajectory(1, [(1, 0.0)])], SimConfig(), horizon_s=600.0, check_monitors=False)
    assert sim.route(0, 5) == [0, 1, 3, 5]
    sim.micro_step()
    assert sim.occupancy(1) == 1
    assert sim.expected_time(1) > sim.expected_time(2)
    assert sim.route(0, 5) == [0, 2, 4, 5]


def test_vehicles_keep_their_spacing_and_never_outrun_their_speed():
    net = line_network(k=3, length=100.0, speed=10.0, monitored=(0, 1, 2))
    net.segments[1].speed_limit = 2.0
    trajs = [trajectory(k, [(0, 2.0 * k), (2, 2.0 * k + 100.0)]) for k in range(8)]
    cfg = SimConfig(resync=False)
    sim = new_sim(net, trajs, cfg, horizon_s=400.0)
    dt = cfg.micro_step
    queued = False
    while not sim.finished:
        before = {v.id: (v.segment, v.offset, v.speed) for v in sim.vehicles if v.on_network}
        sim.micro_step()
        for lanes in sim.lanes.values():
            for lane in lanes:
                gaps = [a.offset - b.offset for a, b in zip(lane, lane[1:])]
                assert all(gap >= cfg.min_gap - 1e-9 for gap in gaps)
                queued = queued or len(lane) > 1
        for v in sim.vehicles:
            if v.id not in before or not v.on_network:
                continue
            segment, offset, speed = before[v.id]
            moved = v.offset - offset if v.segment == segment else net.segments[segment].length - offset + v.offset
            assert moved >= -1e-9
            assert moved <= (speed + cfg.max_accel * dt) * dt + 1e-9
            assert moved <= sim.group_limits[v.group] * dt + 1e-9
    assert queued


def test_fully_observed_paths_come_back_unchanged():
    net = line_network(k=3, length=100.0, speed=10.0, monitored=(0, 1, 2))
    observed = trajectory(1, [(0, 0.0), (1, 10.0), (2, 20.0)])
    recovered, records = run_to_completion(new_sim(net, [observed], SimConfig(group_speed_limits=LIMITS)))
    assert [p.segment_id for p in recovered[0].points] == [p.segment_id for p in observed.points]
    assert [p.timestamp for p in recovered[0].points] == [p.timestamp for p in observed.points]
    assert recovery_error(records) == 0.0


def test_recovery_error_ignores_record_order():
    rng = np.random.default_rng(5)
    records = [
        ArrivalRecord(vehicle_id=k, point_index=1, t_real=float(t), t_sim=float(s))
        for k, (t, s) in enumerate(rng.uniform(0.0, 900.0, size=(40, 2)))
    ]
    expected = recovery_error(records)
    for _ in range(5):
        shuffled = [records[i] for i in rng.permutation(len(records))]
        assert recovery_error(shuffled) == expected
