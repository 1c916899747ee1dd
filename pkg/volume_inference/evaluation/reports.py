"""
Report tables: method comparison, ablation comparison, alpha sweep, and per-class / per-hour breakdowns.
"""
from pathlib import Path

import pandas as pd
from pydantic import BaseModel, Field

from volume_inference.evaluation.metrics import MetricReport
from volume_inference.files import read_document, write_document

REPORT_FILE_VERSION = 1


class AlphaSweepRow(BaseModel):
    alpha: float
    test: MetricReport
    validation: MetricReport | None = None


class AlphaSweepSummary(BaseModel):
    """Test errors per alpha; the best alpha is picked on validation RMSE."""
    rows: list[AlphaSweepRow] = Field(default_factory=list)
    best_alpha: float | None = Field(None, description="Lowest validation RMSE; ties go to the smaller alpha")


def comparison_frame(results: dict[str, MetricReport], label: str = "method") -> pd.DataFrame:
    """One row per method (or ablation variant) with RMSE and MAPE."""
    return pd.DataFrame(
        [(name, r.rmse, r.mape, r.samples, r.mape_samples) for name, r in results.items()],
        columns=[label, "rmse", "mape", "samples", "mape_samples"],
    )


def breakdown_frame(results: dict[str, MetricReport], by: str = "by_class", label: str = "method") -> pd.DataFrame:
    """Long table of per-class (`by_class`) or per-hour (`by_hour`) metrics for plotting elsewhere."""
    rows = [
        (name, row.key, row.rmse, row.mape, row.samples)
        for name, report in results.items()
        for row in getattr(report, by)
    ]
    key = "road_class" if by == "by_class" else "hour"
    return pd.DataFrame(rows, columns=[label, key, "rmse", "mape", "samples"])


def alpha_sweep_summary(
    test: dict[float, MetricReport], validation: dict[float, MetricReport] | None = None
) -> AlphaSweepSummary:
    validation = validation or {}
    rows = [AlphaSweepRow(alpha=a, test=test[a], validation=validation.get(a)) for a in sorted(test)]
    scored = [(row.validation.rmse, row.alpha) for row in rows if row.validation is not None]
    return AlphaSweepSummary(rows=rows, best_alpha=min(scored)[1] if scored else None)


def write_tables(results: dict[str, MetricReport], directory: str | Path, name: str, label: str = "method") -> list[Path]:
    """Write the comparison and both breakdown CSVs. Returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / f"{name}.csv", directory / f"{name}_by_class.csv", directory / f"{name}_by_hour.csv"]
    comparison_frame(results, label).to_csv(paths[0], index=False)
    breakdown_frame(results, "by_class", label).to_csv(paths[1], index=False)
    breakdown_frame(results, "by_hour", label).to_csv(paths[2], index=False)
    return paths


def save_report(path: str | Path, reports: dict[str, MetricReport], extra: dict | None = None) -> None:
    write_document(path, {
        "version": REPORT_FILE_VERSION,
        "reports": {name: r.model_dump(mode="json") for name, r in reports.items()},
        **(extra or {}),
    })


def load_report(path: str | Path) -> dict[str, MetricReport]:
    data = read_document(path, REPORT_FILE_VERSION)
    return {name: MetricReport.model_validate(item) for name, item in data.get("reports", {}).items()}
