"""
End-to-end runs: scenario -> recovery -> spatiotemporal graphs -> embeddings -> volume propagation -> evaluation.

Every stage reads its inputs from and writes its outputs to one run directory. `manifest.json` records, per stage,
the wall time, the seed it consumed, and SHA-256 hashes of its inputs and outputs. A stage is skipped when its
outputs still hash to what the manifest recorded, its inputs have not changed, and its settings are the same.

## KEY TAKEAWAYS
- All randomness flows from `PipelineConfig.seed`; each stage derives its own seed with `derive_seed`.
- `run_all(config, start="infer")` reruns from `infer` on; earlier artifacts must already exist.
- `ablations(config)` compares the full method with its default-simulator (df), unmasked (um), and
  embedding-free (semi) variants on the same scenario and splits.
"""
import hashlib
import json
import logging
import platform
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from volume_inference import __version__
from volume_inference.config import EvalConfig, InferenceConfig, PipelineConfig, derive_seed, save_config
from volume_inference.embedding import EmbeddingTable, joint_train, load_embeddings, save_embeddings
from volume_inference.errors import StageError, VolumeInferenceError
from volume_inference.evaluation.baselines import (
    baseline_contextual_average,
    baseline_graph_ssl,
    baseline_linear_regression,
    baseline_spatial_knn,
)
from volume_inference.evaluation.metrics import EvalSplit, MetricReport, aggregate_reports, evaluate_run, make_split
from volume_inference.evaluation.reports import (
    REPORT_FILE_VERSION,
    alpha_sweep_summary,
    comparison_frame,
    load_report,
    save_report,
    write_tables,
)
from volume_inference.files import file_sha256, parse_model, read_document, write_document
from volume_inference.inference import (
    InferenceProblem,
    MaskedSimilarityGraph,
    build_masked_graph,
    graph_from_st_graphs,
    harmonic_solve,
    load_volumes,
    save_volumes,
)
from volume_inference.recovery.agent import rollout, save_log, train
from volume_inference.recovery.greedy import greedy_calibrate, run_schedule
from volume_inference.recovery.qnetwork import save_model
from volume_inference.scenario import (
    Scenario,
    dense_trajectories,
    generate_scenario,
    incomplete_trajectories,
    load_scenario,
    save_scenario,
)
from volume_inference.simulation.simulator import (
    ArrivalRecord,
    load_recovery,
    records_to_frame,
    recovery_error,
    save_recovery,
)
from volume_inference.st_graph import build, load_graph, save_graph
from volume_inference.trajectory import TrajectorySet, VolumeTensor

logger = logging.getLogger(__name__)

STAGES = ("scenario", "recover", "graphs", "embed", "infer", "evaluate")
METHOD = "embedding_propagation"
VALIDATION = "validation"
ABLATIONS = ("full", "df", "um", "semi")
MANIFEST_FILE_VERSION = 1
SPLITS_FILE_VERSION = 1

# Artifact names inside a run directory
SCENARIO_FILE = "scenario.json"
RECOVERED_FILE = "recovered.json"
ARRIVALS_FILE = "arrivals.csv"
MODEL_FILE = "model.json"
TRAINING_LOG_FILE = "training_log.csv"
SCHEDULE_FILE = "schedule.json"
DENSE_GRAPH_FILE = "g_dense.csv"
RECOVERED_GRAPH_FILE = "g_recovered.csv"
EMBEDDINGS_FILE = "embeddings.csv"
SPLITS_FILE = "splits.json"
REPORT_FILE = "report.json"
ABLATIONS_FILE = "ablations.json"
ALPHA_SWEEP_FILE = "alpha_sweep.json"


#################################
# Manifest
#################################

class StageRecord(BaseModel):
    """What one stage consumed and produced."""
    wall_time_s: float = Field(..., description="Wall-clock time of the stage, seconds")
    seed: int | None = Field(None, description="Derived seed the stage consumed")
    settings: str = Field(..., description="Hash of the config sections the stage depends on")
    inputs: dict[str, str] = Field(default_factory=dict, description="Input artifact -> SHA-256")
    outputs: dict[str, str] = Field(default_factory=dict, description="Output artifact -> SHA-256")


class Manifest(BaseModel):
    """Versions, seeds, and per-stage records of a run directory."""
    version: int = MANIFEST_FILE_VERSION
    package_version: str = __version__
    python_version: str = Field(default_factory=platform.python_version)
    numpy_version: str = np.__version__
    master_seed: int = 0
    seeds: dict[str, int] = Field(default_factory=dict)
    stages: dict[str, StageRecord] = Field(default_factory=dict)


def stage_seeds(config: PipelineConfig) -> dict[str, int]:
    """Every seed a run consumes, derived from the master seed."""
    seeds = {name: derive_seed(config.seed, name) for name in ("gen", "sim", "train", "embed")}
    for s in config.evaluation.seeds:
        seeds[f"split:{s}"] = derive_seed(config.seed, f"split:{s}")
    return seeds


def load_manifest(directory: Path) -> Manifest | None:
    path = directory / "manifest.json"
    if not path.exists():
        return None
    data = read_document(path, MANIFEST_FILE_VERSION)
    return parse_model(Manifest, data, str(path))


def _settings_hash(settings: dict) -> str:
    return hashlib.sha256(json.dumps(settings, sort_keys=True, default=str).encode()).hexdigest()


#################################
# Stage Runner
#################################

@dataclass
class StageSpec:
    """One stage: the artifacts it reads and writes, the settings it depends on, and what it does."""
    name: str
    inputs: list[str]
    outputs: list[str]
    settings: dict
    action: Callable[[], None]
    seed: int | None = None


@dataclass
class Run:
    """A run directory plus the state shared between its stages."""
    config: PipelineConfig
    directory: Path
    manifest: Manifest
    force: set[str] = field(default_factory=set)
    _scenario: Scenario | None = field(default=None, repr=False)

    @property
    def seeds(self) -> dict[str, int]:
        return self.manifest.seeds

    def path(self, name: str) -> Path:
        return self.directory / name

    def scenario(self) -> Scenario:
        if self._scenario is None:
            self._scenario = load_scenario(self.path(SCENARIO_FILE))
        return self._scenario

    def splits(self) -> list[EvalSplit]:
        data = read_document(self.path(SPLITS_FILE), SPLITS_FILE_VERSION)
        return [parse_model(EvalSplit, item, f"{SPLITS_FILE}: splits[{k}]") for k, item in enumerate(data["splits"])]

    def save_manifest(self) -> None:
        self.path("manifest.json").write_text(self.manifest.model_dump_json(indent=2))


def open_run(config: PipelineConfig, directory: str | Path | None = None, force: Sequence[str] = ()) -> Run:
    """Prepare a run directory and its manifest.

    Args:
        config: The run's config. It is written to `config.json` in the directory.
        directory: Run directory. Defaults to `config.output_dir`.
        force: Stages to rerun even when they are up to date.

    Returns:
        The run. A manifest from an earlier run with another master seed is discarded.
    """
    directory = Path(directory or config.output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(directory)
    if manifest is None or manifest.master_seed != config.seed:
        manifest = Manifest(master_seed=config.seed)
    manifest.seeds = stage_seeds(config)
    save_config(config, directory / "config.json")
    return Run(config=config, directory=directory, manifest=manifest, force=set(force))


def _hashes(run: Run, names: list[str]) -> dict[str, str]:
    return {name: file_sha256(run.path(name)) for name in names}


def _is_current(run: Run, spec: StageSpec) -> bool:
    record = run.manifest.stages.get(spec.name)
    if record is None or record.settings != _settings_hash(spec.settings):
        return False
    if set(record.outputs) != set(spec.outputs) or set(record.inputs) != set(spec.inputs):
        return False
    paths = [*spec.inputs, *spec.outputs]
    if not all(run.path(name).exists() for name in paths):
        return False
    return _hashes(run, spec.inputs) == record.inputs and _hashes(run, spec.outputs) == record.outputs


def run_stage(run: Run, spec: StageSpec) -> None:
    """Run one stage unless it is up to date, then record it in the manifest.

    Missing inputs and failures raise StageError naming the stage and the artifacts it left behind.
    """
    if spec.name not in run.force and _is_current(run, spec):
        logger.info("Stage %s is up to date", spec.name)
        return
    missing = [name for name in spec.inputs if not run.path(name).exists()]
    if missing:
        raise StageError(spec.name, f"missing input {missing[0]}", [str(run.path(name)) for name in missing])

    logger.info("Running stage %s", spec.name)
    start = time.perf_counter()
    try:
        spec.action()
    except StageError:
        raise
    except (VolumeInferenceError, ValueError, OSError) as e:
        left = [str(run.path(name)) for name in spec.outputs if run.path(name).exists()]
        raise StageError(spec.name, str(e), left) from e

    run.manifest.stages[spec.name] = StageRecord(
        wall_time_s=time.perf_counter() - start,
        seed=spec.seed,
        settings=_settings_hash(spec.settings),
        inputs=_hashes(run, spec.inputs),
        outputs=_hashes(run, spec.outputs),
    )
    run.save_manifest()
    logger.info("Stage %s done in %.1f s", spec.name, run.manifest.stages[spec.name].wall_time_s)


#################################
# Building Blocks
#################################

def recover_trajectories(
    scenario: Scenario,
    method: str,
    config: PipelineConfig,
    seeds: dict[str, int],
    directory: Path | None = None,
) -> tuple[TrajectorySet, list[ArrivalRecord]]:
    """Complete the incomplete trajectories with the simulator.

    Args:
        scenario: Supplies the network and the sensor observations.
        method: "dqn" trains a Q-network and rolls it out, "greedy" calibrates hourly limits,
            "default" simulates with the configured limits untouched.
        config: Supplies the simulator and training settings.
        seeds: Derived seeds of the run.
        directory: Where the model, training log, or schedule are written. None skips them.

    Returns:
        The recovered trajectories and their arrival records.
    """
    sim_cfg = config.sim.model_copy(update={"seed": seeds["sim"]})
    incomplete = incomplete_trajectories(scenario)
    horizon_s = scenario.horizon * scenario.interval_length

    if method == "dqn":
        train_cfg = config.train.model_copy(update={"seed": seeds["train"]})
        qnet, log = train(scenario.network, incomplete, sim_cfg, train_cfg, train_cfg.episode_horizon_s or horizon_s)
        if directory is not None:
            save_model(qnet, directory / MODEL_FILE)
            save_log(log, directory / TRAINING_LOG_FILE)
        recovered, records = rollout(qnet, scenario.network, incomplete, sim_cfg, horizon_s)
    elif method == "greedy":
        schedule = greedy_calibrate(scenario.network, incomplete, sim_cfg, horizon_s)
        if directory is not None:
            (directory / SCHEDULE_FILE).write_text(schedule.model_dump_json(indent=2))
        recovered, records = run_schedule(scenario.network, incomplete, sim_cfg, schedule, horizon_s)
    elif method == "default":
        recovered, records = rollout(None, scenario.network, incomplete, sim_cfg, horizon_s)
    else:
        raise ValueError(f"Unknown recovery method {method!r}")

    observed = [r for r in records if r.point_index > 0]
    if observed:
        logger.info("Recovery (%s): arrival error %.2f s over %d points", method, recovery_error(observed), len(observed))
    return recovered, records


def make_splits(scenario: Scenario, cfg: EvalConfig, seeds: dict[str, int]) -> list[EvalSplit]:
    """One split of the monitored segments per evaluation seed."""
    return [
        make_split(scenario.network.monitor_points, seeds[f"split:{s}"], cfg.test_fraction, cfg.validation_fraction)
        for s in cfg.seeds
    ]


def masked_graph(
    table: EmbeddingTable, scenario: Scenario, cfg: InferenceConfig, spatial_mask: bool | None = None
) -> MaskedSimilarityGraph:
    return build_masked_graph(
        table,
        scenario.network,
        scenario.horizon,
        spatial_mask=cfg.spatial_mask if spatial_mask is None else spatial_mask,
        temporal_window=cfg.temporal_window,
        clamp_negative=cfg.clamp_negative,
    )


def propagate(graph: MaskedSimilarityGraph, scenario: Scenario, split: EvalSplit, cfg: InferenceConfig) -> VolumeTensor:
    """Volumes of every cell given the true volumes of the split's training segments."""
    observed = scenario.ground_truth_volumes.observe_rows(split.train)
    problem = InferenceProblem(observed, graph, tol=cfg.tol, max_iter=cfg.max_iter, mode=cfg.mode)
    return harmonic_solve(problem).volumes


def score_graph(
    graph: MaskedSimilarityGraph, scenario: Scenario, splits: list[EvalSplit], config: PipelineConfig
) -> tuple[MetricReport, MetricReport | None]:
    """Propagate on every split and average the test (and, when present, validation) reports."""
    test, validation = [], []
    for split in splits:
        volumes = propagate(graph, scenario, split, config.inference)
        test.append(evaluate_run(volumes, scenario, split, config.evaluation))
        if split.validation:
            validation.append(evaluate_run(volumes, scenario, split, config.evaluation, rows=split.validation))
    return aggregate_reports(test), aggregate_reports(validation) if validation else None


def baseline_predictions(scenario: Scenario, split: EvalSplit, cfg: EvalConfig) -> dict[str, np.ndarray]:
    k = min(cfg.knn_k, len(split.train))
    return {
        "spatial_knn": baseline_spatial_knn(k, split, scenario),
        "contextual_average": baseline_contextual_average(split, scenario),
        "linear_regression": baseline_linear_regression(split, scenario),
        "graph_ssl": baseline_graph_ssl(split, scenario),
    }


def _volumes_file(k: int) -> str:
    return f"volumes_{k}.csv"


#################################
# Stages
#################################

def _scenario_stage(run: Run) -> StageSpec:
    config = run.config

    def action():
        if config.scenario_path:
            scenario = load_scenario(config.scenario_path)
        else:
            scenario = generate_scenario(config.gen.model_copy(update={"seed": run.seeds["gen"]}))
        save_scenario(scenario, run.path(SCENARIO_FILE))
        run._scenario = None

    source = {"path": config.scenario_path} if config.scenario_path else {"gen": config.gen.model_dump()}
    if config.scenario_path:
        source["sha256"] = file_sha256(config.scenario_path) if Path(config.scenario_path).exists() else None
    return StageSpec("scenario", [], [SCENARIO_FILE], {**source, "seed": run.seeds["gen"]}, action, run.seeds["gen"])


def _recover_stage(run: Run) -> StageSpec:
    config = run.config
    method = config.recovery_method
    extra = {"dqn": [MODEL_FILE, TRAINING_LOG_FILE], "greedy": [SCHEDULE_FILE], "default": []}[method]

    def action():
        recovered, records = recover_trajectories(run.scenario(), method, config, run.seeds, run.directory)
        save_recovery(run.path(RECOVERED_FILE), recovered, records)
        records_to_frame(records).to_csv(run.path(ARRIVALS_FILE), index=False)

    settings = {
        "method": method,
        "sim": config.sim.model_dump(),
        "train": config.train.model_dump() if method == "dqn" else None,
        "seeds": [run.seeds["sim"], run.seeds["train"]],
    }
    return StageSpec(
        "recover", [SCENARIO_FILE], [RECOVERED_FILE, ARRIVALS_FILE, *extra], settings, action, run.seeds["train"]
    )


def _graphs_stage(run: Run) -> StageSpec:
    def action():
        scenario = run.scenario()
        recovered, _ = load_recovery(run.path(RECOVERED_FILE))
        net, length, n = scenario.network, scenario.interval_length, scenario.horizon
        save_graph(build(dense_trajectories(scenario), net, length, n), run.path(DENSE_GRAPH_FILE))
        save_graph(build(recovered, net, length, n), run.path(RECOVERED_GRAPH_FILE))

    return StageSpec(
        "graphs", [SCENARIO_FILE, RECOVERED_FILE], [DENSE_GRAPH_FILE, RECOVERED_GRAPH_FILE], {}, action
    )


def _embed_stage(run: Run, alpha: float | None = None, output: str = EMBEDDINGS_FILE, name: str = "embed") -> StageSpec:
    cfg = run.config.embed.model_copy(update={"seed": run.seeds["embed"]})
    if alpha is not None:
        cfg = cfg.model_copy(update={"alpha": alpha})

    def action():
        scenario = run.scenario()
        m, n = scenario.network.m, scenario.horizon
        g_dense = load_graph(run.path(DENSE_GRAPH_FILE), m, n)
        g_recovered = load_graph(run.path(RECOVERED_GRAPH_FILE), m, n)
        save_embeddings(joint_train(g_dense, g_recovered, cfg), run.path(output))

    return StageSpec(
        name, [SCENARIO_FILE, DENSE_GRAPH_FILE, RECOVERED_GRAPH_FILE], [output], cfg.model_dump(), action, cfg.seed
    )


def _infer_stage(run: Run) -> StageSpec:
    config = run.config
    outputs = [SPLITS_FILE, *(_volumes_file(k) for k in range(len(config.evaluation.seeds)))]

    def action():
        scenario = run.scenario()
        splits = make_splits(scenario, config.evaluation, run.seeds)
        write_document(run.path(SPLITS_FILE), {
            "version": SPLITS_FILE_VERSION,
            "splits": [split.model_dump(mode="json") for split in splits],
        })
        graph = masked_graph(load_embeddings(run.path(EMBEDDINGS_FILE)), scenario, config.inference)
        for k, split in enumerate(splits):
            save_volumes(propagate(graph, scenario, split, config.inference), run.path(_volumes_file(k)))

    settings = {"inference": config.inference.model_dump(), "evaluation": config.evaluation.model_dump(),
                "seeds": [run.seeds[f"split:{s}"] for s in config.evaluation.seeds]}
    return StageSpec("infer", [SCENARIO_FILE, EMBEDDINGS_FILE], outputs, settings, action)


def _evaluate_stage(run: Run) -> StageSpec:
    config = run.config
    n_splits = len(config.evaluation.seeds)
    inputs = [SCENARIO_FILE, SPLITS_FILE, *(_volumes_file(k) for k in range(n_splits))]
    tables = ["comparison.csv", "comparison_by_class.csv", "comparison_by_hour.csv"]

    def action():
        scenario = run.scenario()
        splits = run.splits()
        per_method: dict[str, list[MetricReport]] = {METHOD: []}
        validation: list[MetricReport] = []
        for k, split in enumerate(splits):
            volumes = load_volumes(run.path(_volumes_file(k)), scenario.interval_length)
            per_method[METHOD].append(evaluate_run(volumes, scenario, split, config.evaluation))
            if split.validation:
                validation.append(evaluate_run(volumes, scenario, split, config.evaluation, rows=split.validation))
            for name, predictions in baseline_predictions(scenario, split, config.evaluation).items():
                per_method.setdefault(name, []).append(evaluate_run(predictions, scenario, split, config.evaluation))
        reports = {name: aggregate_reports(items) for name, items in per_method.items()}
        extra = {"split_seeds": [split.seed for split in splits]}
        if validation:
            extra["validation"] = aggregate_reports(validation).model_dump(mode="json")
        save_report(run.path(REPORT_FILE), reports, extra)
        write_tables(reports, run.directory, "comparison")
        logger.info("\n%s", comparison_frame(reports).to_string(index=False))

    return StageSpec("evaluate", inputs, [REPORT_FILE, *tables], {"evaluation": config.evaluation.model_dump()}, action)


#################################
# Operations
#################################

def run_all(
    config: PipelineConfig,
    start: str | None = None,
    alpha_sweep: Sequence[float] | None = None,
    directory: str | Path | None = None,
) -> Path:
    """Run every stage in order and return the run directory.

    Args:
        config: The run's config.
        start: First stage to (re)run. Earlier stages are not run and their outputs must already exist.
        alpha_sweep: Alphas to re-embed, propagate, and score after the main run.
        directory: Run directory. Defaults to `config.output_dir`.

    Returns:
        The run directory, holding `report.json`, the comparison tables, and `manifest.json`.
    """
    if start is not None and start not in STAGES:
        raise ValueError(f"Unknown stage {start!r}; expected one of {STAGES}")
    first = STAGES.index(start) if start else 0
    run = open_run(config, directory, force=STAGES[first:] if start else ())

    builders = {
        "scenario": _scenario_stage,
        "recover": _recover_stage,
        "graphs": _graphs_stage,
        "embed": _embed_stage,
        "infer": _infer_stage,
        "evaluate": _evaluate_stage,
    }
    for name in STAGES[first:]:
        run_stage(run, builders[name](run))

    if alpha_sweep:
        sweep(run, alpha_sweep)
    return run.directory


def _saved_sweep_report(path: Path, settings: str) -> dict[str, MetricReport] | None:
    if not path.exists() or read_document(path, REPORT_FILE_VERSION).get("settings") != settings:
        return None
    return load_report(path)


def sweep(run: Run, alphas: Sequence[float]) -> Path:
    """Re-embed with every alpha, then propagate and score on the run's splits.

    Writes one report per alpha under `alpha_sweep/` and a summary naming the alpha with the lowest
    validation RMSE. A saved per-alpha report is read back instead of re-scored while its embeddings, scenario,
    splits and settings are unchanged.
    """
    test: dict[float, MetricReport] = {}
    validation: dict[float, MetricReport] = {}
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise StageError("alpha_sweep", f"alpha {alpha} is outside [0, 1]")
        output = f"alpha_sweep/embeddings_{alpha:g}.csv"
        run.path("alpha_sweep").mkdir(exist_ok=True)
        run_stage(run, _embed_stage(run, alpha, output, name=f"embed_alpha_{alpha:g}"))

        report_path = run.path(f"alpha_sweep/report_{alpha:g}.json")
        settings = _settings_hash({
            "embeddings": file_sha256(run.path(output)),
            "scenario": file_sha256(run.path(SCENARIO_FILE)),
            "splits": file_sha256(run.path(SPLITS_FILE)),
            "inference": run.config.inference.model_dump(),
            "evaluation": run.config.evaluation.model_dump(),
        })
        saved = _saved_sweep_report(report_path, settings)
        if saved is not None:
            logger.info("Alpha %g is up to date", alpha)
            test[alpha], val = saved[METHOD], saved.get(VALIDATION)
        else:
            scenario = run.scenario()
            graph = masked_graph(load_embeddings(run.path(output)), scenario, run.config.inference)
            try:
                test[alpha], val = score_graph(graph, scenario, run.splits(), run.config)
            except VolumeInferenceError as e:
                raise StageError("alpha_sweep", str(e), [str(run.path(output))]) from e
            reports = {METHOD: test[alpha]} if val is None else {METHOD: test[alpha], VALIDATION: val}
            save_report(report_path, reports, {"alpha": alpha, "settings": settings})
        if val is not None:
            validation[alpha] = val

    summary = alpha_sweep_summary(test, validation)
    write_document(run.path(ALPHA_SWEEP_FILE), {"version": REPORT_FILE_VERSION, **summary.model_dump(mode="json")})
    comparison_frame({f"{a:g}": r for a, r in test.items()}, label="alpha").to_csv(
        run.path("alpha_sweep.csv"), index=False
    )
    logger.info("Best alpha by validation RMSE: %s", summary.best_alpha)
    return run.path(ALPHA_SWEEP_FILE)


def ablations(config: PipelineConfig, directory: str | Path | None = None) -> Path:
    """Compare the full method with its variants on one scenario and one set of splits.

    - full: the run's own propagation.
    - df: trajectories recovered with the configured limits, no learning.
    - um: similarities between every pair of segments, no adjacency mask.
    - semi: similarities taken directly from the spatiotemporal edge weights, no embeddings.

    Returns:
        Path of the ablation report. `ablations.csv` holds the RMSE/MAPE table.
    """
    run_dir = run_all(config, directory=directory)
    run = open_run(config, run_dir)
    scenario = run.scenario()
    splits = run.splits()
    m, n = scenario.network.m, scenario.horizon
    results: dict[str, MetricReport] = {}

    def full():
        table = load_embeddings(run.path(EMBEDDINGS_FILE))
        return score_graph(masked_graph(table, scenario, config.inference), scenario, splits, config)[0]

    def default_simulator():
        if config.recovery_method == "default":
            return full()
        recovered, records = recover_trajectories(scenario, "default", config, run.seeds)
        save_recovery(run.path("ablation_df/recovered.json"), recovered, records)
        g_dense = load_graph(run.path(DENSE_GRAPH_FILE), m, n)
        g_recovered = build(recovered, scenario.network, scenario.interval_length, n)
        table = joint_train(g_dense, g_recovered, config.embed.model_copy(update={"seed": run.seeds["embed"]}))
        return score_graph(masked_graph(table, scenario, config.inference), scenario, splits, config)[0]

    def unmasked():
        table = load_embeddings(run.path(EMBEDDINGS_FILE))
        graph = masked_graph(table, scenario, config.inference, spatial_mask=False)
        return score_graph(graph, scenario, splits, config)[0]

    def semi():
        g_dense = load_graph(run.path(DENSE_GRAPH_FILE), m, n)
        g_recovered = load_graph(run.path(RECOVERED_GRAPH_FILE), m, n)
        return score_graph(graph_from_st_graphs(g_dense, g_recovered, config.embed.alpha), scenario, splits, config)[0]

    variants = {"full": full, "df": default_simulator, "um": unmasked, "semi": semi}
    for name in ABLATIONS:
        logger.info("Ablation %s", name)
        start = time.perf_counter()
        try:
            results[name] = variants[name]()
        except (VolumeInferenceError, ValueError, OSError) as e:
            raise StageError(f"ablation:{name}", str(e), [str(run.directory)]) from e
        logger.info("Ablation %s: RMSE %.3f (%.1f s)", name, results[name].rmse, time.perf_counter() - start)

    save_report(run.path(ABLATIONS_FILE), results, {"split_seeds": [split.seed for split in splits]})
    write_tables(results, run.directory, "ablations", label="variant")
    return run.path(ABLATIONS_FILE)
