import json

import pytest

from tests.conftest import tiny_pipeline_config
from volume_inference import pipeline
from volume_inference.config import InferenceConfig
from volume_inference.errors import StageError
from volume_inference.evaluation.reports import load_report
from volume_inference.files import read_document
from volume_inference.pipeline import (
    ABLATIONS,
    METHOD,
    STAGES,
    ablations,
    load_manifest,
    open_run,
    run_all,
    stage_seeds,
    sweep,
)

BASELINES = ["spatial_knn", "contextual_average", "linear_regression", "graph_ssl"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("run")
    return run_all(tiny_pipeline_config(directory))


def test_run_all_writes_every_artifact(run_dir):
    reports = load_report(run_dir / "report.json")
    assert set(reports) == {METHOD, *BASELINES}
    assert all(report.samples > 0 for report in reports.values())
    for name in ("comparison.csv", "comparison_by_class.csv", "comparison_by_hour.csv", "model.json",
                 "training_log.csv", "arrivals.csv", "g_dense.csv", "g_recovered.csv", "embeddings.csv"):
        assert (run_dir / name).exists(), name

    manifest = load_manifest(run_dir)
    assert set(manifest.stages) == set(STAGES)
    assert manifest.seeds == stage_seeds(tiny_pipeline_config(run_dir))
    assert manifest.stages["embed"].seed == manifest.seeds["embed"]


def test_a_second_run_reuses_every_stage(run_dir):
    before = load_manifest(run_dir)
    report = (run_dir / "report.json").read_bytes()
    run_all(tiny_pipeline_config(run_dir))
    after = load_manifest(run_dir)
    assert {k: v.wall_time_s for k, v in after.stages.items()} == {k: v.wall_time_s for k, v in before.stages.items()}
    assert (run_dir / "report.json").read_bytes() == report


def test_same_seed_gives_the_same_report(run_dir, tmp_path):
    other = run_all(tiny_pipeline_config(tmp_path))
    assert (other / "report.json").read_bytes() == (run_dir / "report.json").read_bytes()
    assert (other / "embeddings.csv").read_bytes() == (run_dir / "embeddings.csv").read_bytes()


def test_starting_late_needs_the_earlier_artifacts(tmp_path):
    with pytest.raises(StageError) as info:
        run_all(tiny_pipeline_config(tmp_path), start="infer")
    assert info.value.stage == "infer"
    with pytest.raises(ValueError):
        run_all(tiny_pipeline_config(tmp_path), start="train")


def test_restarting_from_a_stage_reruns_it(run_dir):
    before = load_manifest(run_dir)
    run_all(tiny_pipeline_config(run_dir), start="evaluate")
    after = load_manifest(run_dir)
    assert after.stages["infer"] == before.stages["infer"]
    assert after.stages["evaluate"].wall_time_s != before.stages["evaluate"].wall_time_s
    assert after.stages["evaluate"].outputs == before.stages["evaluate"].outputs


def test_alpha_sweep(run_dir):
    config = tiny_pipeline_config(run_dir)
    path = sweep(open_run(config, run_dir), [0.0, 0.25, 0.5, 0.75, 1.0])
    summary = read_document(path, 1)
    assert [row["alpha"] for row in summary["rows"]] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert summary["best_alpha"] in (0.0, 0.25, 0.5, 0.75, 1.0)
    for alpha in ("0", "0.25", "0.5", "0.75", "1"):
        assert (run_dir / f"alpha_sweep/report_{alpha}.json").exists()
    with pytest.raises(StageError):
        sweep(open_run(config, run_dir), [1.5])


def test_alpha_sweep_reads_back_up_to_date_reports(run_dir, monkeypatch):
    config = tiny_pipeline_config(run_dir)
    first = read_document(sweep(open_run(config, run_dir), [0.5]), 1)
    saved = load_report(run_dir / "alpha_sweep/report_0.5.json")
    assert set(saved) == {METHOD, "validation"}

    scored = []
    original = pipeline.score_graph

    def counting(*args, **kwargs):
        scored.append(args)
        return original(*args, **kwargs)

    monkeypatch.setattr(pipeline, "score_graph", counting)
    again = read_document(sweep(open_run(config, run_dir), [0.5]), 1)
    assert scored == []
    assert again["rows"] == first["rows"]

    changed = tiny_pipeline_config(run_dir, inference=InferenceConfig(tol=1e-9))
    sweep(open_run(changed, run_dir), [0.5])
    assert len(scored) == 1


def test_ablations(run_dir):
    path = ablations(tiny_pipeline_config(run_dir))
    data = json.loads(path.read_text())
    assert list(data["reports"]) == list(ABLATIONS)
    assert (run_dir / "ablations.csv").exists()
