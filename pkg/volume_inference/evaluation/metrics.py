"""
Error metrics, train/validation/test splits, and per-run metric reports.
"""
import logging
import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from volume_inference.config import EvalConfig
from volume_inference.errors import CoverageError, EmptyInputError
from volume_inference.network import ROAD_CLASSES
from volume_inference.scenario import Scenario

logger = logging.getLogger(__name__)

HOUR_S = 3600.0


#################################
# Metrics
#################################

def _aligned(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"pred has {pred.size} values but truth has {truth.size}")
    if pred.size == 0:
        raise EmptyInputError("Metrics need at least one sample")
    return pred, truth


def rmse(pred, truth) -> float:
    """Root mean squared error."""
    pred, truth = _aligned(pred, truth)
    return math.sqrt(float(np.mean((pred - truth) ** 2)))


def mape(pred, truth, min_volume: float = 5.0) -> float:
    """Mean absolute percentage error, as a fraction, over samples whose true volume is at least `min_volume`."""
    pred, truth = _aligned(pred, truth)
    keep = truth >= min_volume
    if not keep.any():
        raise EmptyInputError(f"Every sample has a true volume below {min_volume}; MAPE is undefined")
    return float(np.mean(np.abs(pred[keep] - truth[keep]) / truth[keep]))


#################################
# Splits
#################################

class EvalSplit(BaseModel):
    """Monitored segments split into training, validation, and test parts."""
    train: list[int] = Field(..., description="Segments whose volumes the methods observe")
    validation: list[int] = Field(default_factory=list, description="Held-out segments for model selection")
    test: list[int] = Field(..., description="Held-out segments for reporting")
    seed: int = Field(0, description="Seed of the split")

    @model_validator(mode="after")
    def _check_disjoint(self):
        parts = [set(self.train), set(self.validation), set(self.test)]
        if sum(len(p) for p in parts) != len(set().union(*parts)):
            raise ValueError("train, validation, and test segments must be disjoint")
        if not self.train or not self.test:
            raise ValueError("train and test must each hold at least one segment")
        return self

    @property
    def held_out(self) -> list[int]:
        return sorted(self.validation + self.test)


def make_split(monitored, seed: int, test_fraction: float = 0.2, validation_fraction: float = 0.2) -> EvalSplit:
    """Shuffle the monitored segments and cut off test, then validation, parts.

    Args:
        monitored: Monitored segment ids.
        seed: Split seed.
        test_fraction: Share of monitored segments held out for testing.
        validation_fraction: Share of the remaining segments held out for validation.

    Returns:
        A split covering every monitored segment, each part sorted.
    """
    ids = np.array(sorted(monitored), dtype=int)
    if ids.size < 2:
        raise ValueError(f"Need at least 2 monitored segments to split, got {ids.size}")
    order = np.random.default_rng(seed).permutation(ids)
    n_test = min(max(1, round(test_fraction * ids.size)), ids.size - 1)
    rest = order[n_test:]
    n_val = min(round(validation_fraction * rest.size), rest.size - 1)
    return EvalSplit(
        train=sorted(int(i) for i in rest[n_val:]),
        validation=sorted(int(i) for i in rest[:n_val]),
        test=sorted(int(i) for i in order[:n_test]),
        seed=seed,
    )


#################################
# Reports
#################################

class BreakdownRow(BaseModel):
    """Metrics over one slice of the evaluated cells."""
    key: str
    rmse: float | None = None
    mape: float | None = None
    samples: int = 0
    mape_samples: int = 0


class MetricReport(BaseModel):
    """Errors of one method on the held-out cells."""
    rmse: float
    mape: float | None = Field(None, description="None when every sample falls below the MAPE threshold")
    samples: int
    mape_samples: int
    runs: int = Field(1, ge=1, description="Runs averaged into this report")
    mape_runs: int = Field(1, ge=0, description="Runs whose MAPE was defined and went into the mean")
    by_class: list[BreakdownRow] = Field(default_factory=list)
    by_hour: list[BreakdownRow] = Field(default_factory=list)


def _row(key: str, pred: np.ndarray, truth: np.ndarray, min_volume: float) -> BreakdownRow:
    if pred.size == 0:
        return BreakdownRow(key=key)
    kept = int(np.count_nonzero(truth >= min_volume))
    return BreakdownRow(
        key=key,
        rmse=rmse(pred, truth),
        mape=mape(pred, truth, min_volume) if kept else None,
        samples=int(pred.size),
        mape_samples=kept,
    )


def evaluate_run(
    predictions,
    scenario: Scenario,
    split: EvalSplit,
    cfg: EvalConfig | None = None,
    rows: Sequence[int] | None = None,
) -> MetricReport:
    """Score predictions on the test segments (or on `rows`) over every interval.

    Args:
        predictions: m x n predicted volumes (array or VolumeTensor). NaN marks a missing prediction.
        scenario: Supplies the ground truth and road classes.
        split: The split; its test segments are scored unless `rows` is given.
        cfg: Evaluation settings (MAPE threshold).
        rows: Segments to score instead of the test segments.

    Returns:
        Overall, per road class, and per hour metrics.
    """
    cfg = cfg or EvalConfig()
    values = np.asarray(getattr(predictions, "values", predictions), dtype=float)
    truth = scenario.ground_truth_volumes.values
    if values.shape != truth.shape:
        raise ValueError(f"Predictions are {values.shape}, expected {truth.shape}")
    rows = sorted(split.test if rows is None else rows)

    block = values[rows]
    missing = [(rows[r], int(t)) for r, t in zip(*np.nonzero(~np.isfinite(block)))]
    if missing:
        raise CoverageError(missing)

    pred, true = block, truth[rows]
    overall = _row("all", pred, true, cfg.mape_min_volume)

    net = scenario.network
    by_class = []
    for road_class in ROAD_CLASSES:
        picked = [k for k, seg_id in enumerate(rows) if net.segments[seg_id].road_class == road_class]
        by_class.append(_row(road_class, pred[picked], true[picked], cfg.mape_min_volume))

    hours = (np.arange(truth.shape[1]) * scenario.interval_length // HOUR_S).astype(int)
    by_hour = [
        _row(str(h), pred[:, hours == h], true[:, hours == h], cfg.mape_min_volume)
        for h in np.unique(hours)
    ]
    return MetricReport(
        rmse=overall.rmse,
        mape=overall.mape,
        samples=overall.samples,
        mape_samples=overall.mape_samples,
        mape_runs=int(overall.mape is not None),
        by_class=by_class,
        by_hour=by_hour,
    )


def _mean(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def aggregate_reports(reports: list[MetricReport]) -> MetricReport:
    """Average metrics over repeated runs; sample counts are summed."""
    if not reports:
        raise EmptyInputError("Nothing to aggregate")

    def merge(rows_per_report: list[list[BreakdownRow]]) -> list[BreakdownRow]:
        keys = list(dict.fromkeys(row.key for rows in rows_per_report for row in rows))
        merged = []
        for key in keys:
            picked = [row for rows in rows_per_report for row in rows if row.key == key]
            merged.append(BreakdownRow(
                key=key,
                rmse=_mean([r.rmse for r in picked]),
                mape=_mean([r.mape for r in picked]),
                samples=sum(r.samples for r in picked),
                mape_samples=sum(r.mape_samples for r in picked),
            ))
        return merged

    runs = sum(r.runs for r in reports)
    mape_runs = sum(r.mape_runs for r in reports)
    if mape_runs < runs:
        logger.warning("MAPE is undefined in %d of %d runs; its mean covers the other %d", runs - mape_runs, runs, mape_runs)
    return MetricReport(
        rmse=float(np.mean([r.rmse for r in reports])),
        mape=_mean([r.mape for r in reports]),
        samples=sum(r.samples for r in reports),
        mape_samples=sum(r.mape_samples for r in reports),
        runs=runs,
        mape_runs=mape_runs,
        by_class=merge([r.by_class for r in reports]),
        by_hour=merge([r.by_hour for r in reports]),
    )
