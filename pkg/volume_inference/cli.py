"""
Command-line entry point: `volume-inference <command> ...`.

Every command reads the same JSON config (`--config`, see `init-config`), takes `--set path=value` overrides and a
`--seed`, and exits with 0 on success, 2 on a config error, and 3 when a stage fails.
"""
import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from volume_inference.config import PipelineConfig, apply_overrides, load_config, save_config
from volume_inference.embedding import joint_train, load_embeddings, save_embeddings
from volume_inference.errors import ConfigError, VolumeInferenceError
from volume_inference.evaluation.metrics import evaluate_run, make_split
from volume_inference.evaluation.reports import save_report, write_tables
from volume_inference.inference import infer_volumes, load_volumes, save_volumes
from volume_inference.logs import configure_logging
from volume_inference.pipeline import (
    ABLATIONS_FILE,
    STAGES,
    ablations,
    baseline_predictions,
    recover_trajectories,
    run_all,
    stage_seeds,
)
from volume_inference.scenario import (
    dense_trajectories,
    generate_scenario,
    incomplete_trajectories,
    load_scenario,
    save_scenario,
)
from volume_inference.simulation.simulator import (
    features_to_frame,
    load_recovery,
    new_sim,
    records_to_frame,
    run_to_completion,
    save_recovery,
)
from volume_inference.st_graph import build, load_graph, save_graph
from volume_inference.trajectory import load_trajectories

logger = logging.getLogger("volume_inference.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


#################################
# Config Handling
#################################

def _grid(value: str) -> tuple[int, int]:
    try:
        rows, cols = (int(part) for part in value.lower().split("x"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"--grid must look like RxC, got {value!r}") from e
    return rows, cols


def _alphas(value: str) -> list[float]:
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"--alpha-sweep must be comma-separated numbers, got {value!r}") from e


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file (or defaults), then `--set` overrides, then the dedicated flags of the command."""
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "no_resync", False):
        overrides.append("sim.resync=false")
    for flag, path in getattr(args, "field_flags", {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{path}={value}")
    return apply_overrides(config, overrides) if overrides else config


def _flags(parser: argparse.ArgumentParser, **fields: tuple[type, str]) -> None:
    """Add flags that override single config fields, e.g. `dim=(int, "embed.dim")`."""
    for flag, (kind, path) in fields.items():
        parser.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=kind, help=f"Overrides {path}")
    parser.set_defaults(field_flags={flag: path for flag, (_, path) in fields.items()})


#################################
# Commands
#################################

def cmd_init_config(args, config: PipelineConfig) -> int:
    save_config(config, args.out)
    logger.info("Wrote config to %s", args.out)
    return EXIT_OK


def cmd_gen_scenario(args, config: PipelineConfig) -> int:
    gen = config.gen
    if args.grid:
        gen = gen.model_copy(update={"rows": args.grid[0], "cols": args.grid[1]})
    seeds = stage_seeds(config)
    scenario = generate_scenario(gen.model_copy(update={"seed": seeds["gen"]}))
    save_scenario(scenario, args.out)
    logger.info("Wrote scenario with %d segments and %d vehicles to %s",
                scenario.network.m, len(scenario.vehicles), args.out)
    return EXIT_OK


def cmd_simulate(args, config: PipelineConfig) -> int:
    scenario = load_scenario(args.scenario)
    sim_cfg = config.sim.model_copy(update={"seed": stage_seeds(config)["sim"]})
    sim = new_sim(scenario.network, incomplete_trajectories(scenario), sim_cfg,
                  horizon_s=scenario.horizon * scenario.interval_length)
    stream = [sim.features()]
    while not sim.finished:
        stream.append(sim.macro_step()[0])
    recovered, records = run_to_completion(sim)
    save_recovery(args.out, recovered, records)
    if args.arrivals_csv:
        records_to_frame(records).to_csv(args.arrivals_csv, index=False)
    if args.features_csv:
        features_to_frame(stream).to_csv(args.features_csv, index=False)
    return EXIT_OK


def cmd_recover(args, config: PipelineConfig) -> int:
    scenario = load_scenario(args.scenario)
    method = "greedy" if args.greedy else config.recovery_method
    out_dir = Path(args.out).parent if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    recovered, records = recover_trajectories(scenario, method, config, stage_seeds(config), out_dir)
    if args.out and method == "dqn" and Path(args.out).name != "model.json":
        (out_dir / "model.json").replace(args.out)
    save_recovery(args.recovered, recovered, records)
    return EXIT_OK


def cmd_build_graphs(args, config: PipelineConfig) -> int:
    scenario = load_scenario(args.scenario)
    dense = load_trajectories(args.dense) if args.dense else dense_trajectories(scenario)
    recovered, _ = load_recovery(args.recovered)
    net, length, n = scenario.network, scenario.interval_length, scenario.horizon
    out_dense, out_recovered = args.out
    save_graph(build(dense, net, length, n), out_dense)
    save_graph(build(recovered, net, length, n), out_recovered)
    return EXIT_OK


def cmd_embed(args, config: PipelineConfig) -> int:
    scenario = load_scenario(args.scenario)
    m, n = scenario.network.m, scenario.horizon
    cfg = config.embed.model_copy(update={"seed": stage_seeds(config)["embed"]})
    save_embeddings(joint_train(load_graph(args.gd, m, n), load_graph(args.gi, m, n), cfg), args.out)
    return EXIT_OK


def _split(scenario, config: PipelineConfig, split_seed: int):
    cfg = config.evaluation
    return make_split(scenario.network.monitor_points, split_seed, cfg.test_fraction, cfg.validation_fraction)


def cmd_infer(args, config: PipelineConfig) -> int:
    scenario = load_scenario(args.scenario)
    split = _split(scenario, config, args.split_seed)
    observed = scenario.ground_truth_volumes.observe_rows(split.train)
    result = infer_volumes(load_embeddings(args.embeddings), scenario.network, observed, config.inference)
    save_volumes(result.volumes, args.out)
    logger.info("Solved in %d sweeps (converged: %s)", result.iterations, result.converged)
    return EXIT_OK


def cmd_evaluate(args, config: PipelineConfig) -> int:
    scenario = load_scenario(args.scenario)
    split = _split(scenario, config, args.split_seed)
    predictions = load_volumes(args.predictions, scenario.interval_length)
    reports = {"predictions": evaluate_run(predictions, scenario, split, config.evaluation)}
    if args.baselines:
        for name, values in baseline_predictions(scenario, split, config.evaluation).items():
            reports[name] = evaluate_run(values, scenario, split, config.evaluation)
    save_report(args.out, reports, {"split_seeds": [split.seed]})
    write_tables(reports, Path(args.out).parent, Path(args.out).stem)
    return EXIT_OK


def cmd_run_all(args, config: PipelineConfig) -> int:
    directory = run_all(config, start=args.start, alpha_sweep=args.alpha_sweep, directory=args.out)
    logger.info("Run finished in %s", directory)
    return EXIT_OK


def cmd_ablations(args, config: PipelineConfig) -> int:
    path = ablations(config, directory=args.out)
    logger.info("Ablation report written to %s", path)
    return EXIT_OK


#################################
# Parser
#################################

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="volume-inference", description="Citywide traffic volume inference")
    parser.add_argument("--log-level", default=None, help="Overrides VOLUME_INFERENCE_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", help="Pipeline config JSON")
        sub.add_argument("--set", action="append", metavar="PATH=VALUE", help="Override a config field")
        sub.add_argument("--seed", type=int, help="Master seed")
        sub.set_defaults(handler=handler)
        return sub

    sub = command("init-config", cmd_init_config, "Write the default config")
    sub.add_argument("--out", required=True)

    sub = command("gen-scenario", cmd_gen_scenario, "Generate a synthetic scenario")
    sub.add_argument("--grid", type=_grid, help="Intersections as RxC")
    _flags(sub, vehicles=(int, "gen.vehicles"), taxi_frac=(float, "gen.taxi_fraction"),
           monitored_frac=(float, "gen.monitored_fraction"))
    sub.add_argument("--out", required=True)

    sub = command("simulate", cmd_simulate, "Recover trajectories with the configured speed limits")
    sub.add_argument("--scenario", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--arrivals-csv")
    sub.add_argument("--features-csv")
    sub.add_argument("--no-resync", action="store_true", help="Never move late vehicles to their next observation")

    sub = command("recover", cmd_recover, "Tune speed limits and recover trajectories")
    sub.add_argument("--scenario", required=True)
    sub.add_argument("--rl-config", dest="config", help="Alias of --config")
    _flags(sub, episodes=(int, "train.episodes"))
    sub.add_argument("--greedy", action="store_true", help="Calibrate hourly limits greedily instead of learning")
    sub.add_argument("--no-resync", action="store_true", help="Never move late vehicles to their next observation")
    sub.add_argument("--out", help="Model file (the training log and schedule go next to it)")
    sub.add_argument("--recovered", required=True)

    sub = command("build-graphs", cmd_build_graphs, "Build the two spatiotemporal graphs")
    sub.add_argument("--scenario", required=True)
    sub.add_argument("--dense", help="Dense trajectory file. Defaults to the scenario's taxis")
    sub.add_argument("--recovered", required=True)
    sub.add_argument("--out", nargs=2, required=True, metavar=("DENSE_CSV", "RECOVERED_CSV"))

    sub = command("embed", cmd_embed, "Jointly embed the two graphs")
    sub.add_argument("--scenario", required=True)
    sub.add_argument("--gd", required=True)
    sub.add_argument("--gi", required=True)
    _flags(sub, alpha=(float, "embed.alpha"), dim=(int, "embed.dim"), window=(int, "embed.window"),
           epochs=(int, "embed.epochs"))
    sub.add_argument("--out", required=True)

    sub = command("infer", cmd_infer, "Propagate observed volumes")
    sub.add_argument("--scenario", required=True)
    sub.add_argument("--embeddings", required=True)
    sub.add_argument("--split-seed", type=int, default=0)
    _flags(sub, tol=(float, "inference.tol"), max_iter=(int, "inference.max_iter"))
    sub.add_argument("--out", required=True)

    sub = command("evaluate", cmd_evaluate, "Score predicted volumes")
    sub.add_argument("--scenario", required=True)
    sub.add_argument("--predictions", required=True)
    sub.add_argument("--split-seed", type=int, default=0)
    sub.add_argument("--baselines", action="store_true", help="Score the baselines on the same split too")
    sub.add_argument("--out", required=True)

    sub = command("run-all", cmd_run_all, "Run every stage")
    sub.add_argument("--from", dest="start", choices=STAGES, help="First stage to rerun")
    sub.add_argument("--alpha-sweep", type=_alphas, help="Comma-separated alphas, e.g. 0,0.25,0.5,0.75,1")
    sub.add_argument("--out", help="Run directory. Defaults to output_dir")

    sub = command("ablations", cmd_ablations, f"Compare variants, written to {ABLATIONS_FILE}")
    sub.add_argument("--out", help="Run directory. Defaults to output_dir")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = build_config(args)
        return args.handler(args, config)
    except (ConfigError, ValidationError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except VolumeInferenceError as e:
        logger.error("%s", e)
        return EXIT_STAGE
    except (ValueError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
