import math

import numpy as np
import pytest
from pydantic import ValidationError

from tests.conftest import make_scenario
from volume_inference.config import EvalConfig
from volume_inference.errors import CoverageError, EmptyInputError
from volume_inference.evaluation.metrics import (
    EvalSplit,
    aggregate_reports,
    evaluate_run,
    make_split,
    mape,
    rmse,
)


def test_rmse_and_mape():
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(math.sqrt(2.0))
    # Only the sample with a true volume of at least 5 counts
    assert mape([4.0, 15.0], [2.0, 10.0], min_volume=5.0) == pytest.approx(0.5)


def test_metrics_reject_bad_input():
    with pytest.raises(EmptyInputError):
        rmse([], [])
    with pytest.raises(ValueError):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(EmptyInputError):
        mape([1.0, 2.0], [1.0, 2.0], min_volume=5.0)


def test_make_split_is_seeded_disjoint_and_complete():
    monitored = range(10, 20)
    split = make_split(monitored, seed=3)
    assert split == make_split(monitored, seed=3)
    assert (len(split.train), len(split.validation), len(split.test)) == (6, 2, 2)
    assert sorted(split.train + split.validation + split.test) == list(monitored)
    assert split.held_out == sorted(split.validation + split.test)
    assert make_split(monitored, seed=4) != split


def test_small_splits():
    split = make_split([4, 7], seed=0)
    assert (len(split.train), len(split.validation), len(split.test)) == (1, 0, 1)
    with pytest.raises(ValueError):
        make_split([4], seed=0)


def test_split_parts_must_be_disjoint():
    with pytest.raises(ValidationError):
        EvalSplit(train=[1, 2], test=[2])


def _scenario(line_net, n: int = 24):
    values = np.arange(line_net.m * n, dtype=float).reshape(line_net.m, n) + 10.0
    return make_scenario(line_net, values)


def test_evaluate_run_scores_the_test_rows(line_net):
    scenario = _scenario(line_net)
    split = EvalSplit(train=[0, 1], test=[2, 3])
    predictions = scenario.ground_truth_volumes.values.copy()
    predictions[[2, 3]] += 1.0
    # Training rows are never scored
    predictions[0] += 100.0

    report = evaluate_run(predictions, scenario, split)
    assert report.rmse == pytest.approx(1.0)
    assert report.samples == 48
    assert report.mape_samples == 48

    by_class = {row.key: row for row in report.by_class}
    assert by_class["major"].samples == 0 and by_class["major"].rmse is None
    assert by_class["secondary"].samples == 48
    # 300 s intervals: 12 per hour
    assert [(row.key, row.samples) for row in report.by_hour] == [("0", 24), ("1", 24)]


def test_evaluate_run_on_other_rows(line_net):
    scenario = _scenario(line_net)
    split = EvalSplit(train=[0], validation=[4], test=[2])
    report = evaluate_run(scenario.ground_truth_volumes, scenario, split, rows=split.validation)
    assert report.rmse == 0.0
    assert report.samples == 24


def test_missing_predictions_are_reported(line_net):
    scenario = _scenario(line_net, n=3)
    predictions = scenario.ground_truth_volumes.values.copy()
    predictions[3, 1] = np.nan
    with pytest.raises(CoverageError) as info:
        evaluate_run(predictions, scenario, EvalSplit(train=[0], test=[2, 3]))
    assert info.value.missing == [(3, 1)]


def test_mape_threshold_comes_from_the_config(line_net):
    scenario = _scenario(line_net, n=2)
    report = evaluate_run(scenario.ground_truth_volumes, scenario, EvalSplit(train=[0], test=[1]),
                          EvalConfig(mape_min_volume=1e6))
    assert report.mape is None
    assert report.mape_samples == 0
    assert report.mape_runs == 0


def test_aggregate_reports(line_net):
    scenario = _scenario(line_net, n=2)
    split = EvalSplit(train=[0], test=[1])
    truth = scenario.ground_truth_volumes.values
    a = evaluate_run(truth + 1.0, scenario, split)
    b = evaluate_run(truth + 3.0, scenario, split)
    merged = aggregate_reports([a, b])
    assert merged.rmse == pytest.approx(2.0)
    assert merged.samples == a.samples + b.samples
    assert [row.key for row in merged.by_class] == ["major", "secondary"]
    assert merged.by_class[0].rmse is None
    with pytest.raises(EmptyInputError):
        aggregate_reports([])


def test_aggregate_counts_the_runs_behind_the_mape(line_net, caplog):
    scenario = _scenario(line_net, n=2)
    split = EvalSplit(train=[0], test=[1])
    truth = scenario.ground_truth_volumes.values
    defined = evaluate_run(truth + 1.0, scenario, split, EvalConfig(mape_min_volume=0.0))
    undefined = evaluate_run(truth + 3.0, scenario, split, EvalConfig(mape_min_volume=1e6))
    assert defined.mape is not None and undefined.mape is None

    merged = aggregate_reports([defined, undefined])
    assert (merged.runs, merged.mape_runs) == (2, 1)
    assert merged.mape == defined.mape
    assert "MAPE is undefined in 1 of 2 runs" in caplog.text
