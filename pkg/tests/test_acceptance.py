"""Directional checks on the default synthetic scenario. Run with `pytest -m slow`."""
import numpy as np
import pytest

from volume_inference.config import EvalConfig, PipelineConfig
from volume_inference.evaluation.reports import load_report
from volume_inference.files import read_document
from volume_inference.pipeline import METHOD, ablations, run_all
from volume_inference.recovery.agent import rollout, train
from volume_inference.scenario import generate_scenario, incomplete_trajectories
from volume_inference.simulation.simulator import recovery_error

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    directory = tmp_path_factory.mktemp("default")
    config = PipelineConfig(output_dir=str(directory), evaluation=EvalConfig(seeds=[0, 1, 2, 3, 4]))
    run_all(config, alpha_sweep=[0.0, 0.25, 0.5, 0.75, 1.0])
    return config, directory


def test_method_beats_the_simple_baselines(default_run):
    _, directory = default_run
    reports = load_report(directory / "report.json")
    for baseline in ("spatial_knn", "contextual_average"):
        assert reports[METHOD].rmse < reports[baseline].rmse
        assert reports[METHOD].mape < reports[baseline].mape


def test_full_method_beats_its_ablations(default_run):
    config, directory = default_run
    reports = load_report(ablations(config, directory))
    assert reports["full"].rmse <= reports["um"].rmse
    assert reports["full"].rmse <= reports["semi"].rmse


def test_mixing_both_graphs_is_no_worse_than_dense_alone(default_run):
    _, directory = default_run
    summary = read_document(directory / "alpha_sweep.json", 1)
    rmse = {row["alpha"]: row["test"]["rmse"] for row in summary["rows"]}
    assert min(rmse.values()) <= rmse[1.0]


def _arrival_error(records) -> float:
    return recovery_error([r for r in records if r.point_index > 0])


def test_learning_reduces_the_recovery_error():
    reductions = []
    for seed in (0, 1, 2):
        config = PipelineConfig(seed=seed)
        scenario = generate_scenario(config.gen.model_copy(update={"seed": seed}))
        # Simulator limits start 10 m/s above the hidden ones
        mis_set = {g: v + 10.0 for g, v in scenario.true_group_limits.items()}
        sim_cfg = config.sim.model_copy(update={"group_speed_limits": mis_set, "seed": seed})
        incomplete = incomplete_trajectories(scenario)
        horizon_s = scenario.horizon * scenario.interval_length

        _, untrained = rollout(None, scenario.network, incomplete, sim_cfg, horizon_s)
        qnet, _ = train(scenario.network, incomplete, sim_cfg, config.train.model_copy(update={"seed": seed}), horizon_s)
        _, trained = rollout(qnet, scenario.network, incomplete, sim_cfg, horizon_s)
        reductions.append(1.0 - _arrival_error(trained) / _arrival_error(untrained))

    assert np.mean(reductions) >= 0.05
