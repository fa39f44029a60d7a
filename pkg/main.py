"""
main.py

Command-line entry point for vipaint_bench.

Verbs:
    run             run one method over a list of seeds on an experiment config
    compare         aggregate finished runs into one CSV table
    train-denoiser  fit an MLP denoiser on draws from the config's GMM prior
    oracle          dump the exact posterior and reference draws from it
    selfcheck       run the numerical invariant suite
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from rich.console import Console
from rich.table import Table

from core.config import DEFAULT_OUTPUT_ROOT, DEFAULT_THREADS, setup_logging
from core.errors import ConfigError, VipaintError
from core.experiment_config import METHODS, build_prior, build_schedule, load_experiment, parse_seeds
from core.message_bus import MessageBus
from core.models import AgentMessage, ExperimentConfig
from core.session_manager import start_run, update_run_status

from agents.orchestrator import Orchestrator
from agents.data_agent import DataAgent, build_problem, save_mlp, train_on_prior
from agents.scenario_agent import ScenarioAgent
from agents.simulation_agent import SimulationAgent
from agents.evaluation_agent import EvaluationAgent
from agents.report_agent import SUMMARY_FILE, ReportAgent, compare_runs
from eval.selfcheck import run_selfcheck
from tools.metrics_tool import oracle_samples
from tools.storage_tool import save_array, save_json

logger = logging.getLogger(__name__)
console = Console()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


@dataclass
class RunOutcome:
    run_id: str
    out_dir: Path
    summary: Optional[Dict]
    failures: List


def build_system() -> MessageBus:
    """
    Instantiate the MessageBus and register all agents.
    """
    bus = MessageBus()
    bus.register_agent("Orchestrator", Orchestrator())
    bus.register_agent("DataAgent", DataAgent())
    bus.register_agent("ScenarioAgent", ScenarioAgent())
    bus.register_agent("SimulationAgent", SimulationAgent())
    bus.register_agent("EvaluationAgent", EvaluationAgent())
    bus.register_agent("ReportAgent", ReportAgent())
    return bus


def default_out_dir(config: ExperimentConfig) -> Path:
    if config.output_dir:
        path = Path(config.output_dir)
        if not path.is_absolute() and config.source:
            path = Path(config.source).parent / path
        return path
    return DEFAULT_OUTPUT_ROOT / config.name


def run_experiment(
    config: ExperimentConfig,
    method: Optional[str] = None,
    seeds: Optional[Sequence[int]] = None,
    out_dir: Optional[Path] = None,
    threads: int = 1,
) -> RunOutcome:
    """Run the agent pipeline for one method and return where it wrote."""
    method = method or config.method
    seeds = list(seeds) if seeds is not None else list(config.seeds)
    out_dir = Path(out_dir) if out_dir is not None else default_out_dir(config)

    state = start_run(config.source or config.name, method, seeds, out_dir)
    update_run_status(out_dir, "running")

    bus = build_system()
    bus.send(
        AgentMessage(
            sender="User",
            receiver="Orchestrator",
            type="START",
            payload={
                "config": config,
                "method": method,
                "seeds": seeds,
                "out_dir": str(out_dir),
                "threads": threads,
            },
            run_id=state.run_id,
        )
    )
    bus.run(run_id=state.run_id)

    orchestrator: Orchestrator = bus.agents["Orchestrator"]  # type: ignore[assignment]
    report = orchestrator.reports.get(state.run_id)
    failed = bool(bus.failures) or report is None
    update_run_status(
        out_dir,
        "failed" if failed else "completed",
        method=method,
        problem_hash=config.problem_hash,
        failures=[f"{f.agent}: {f.error}" for f in bus.failures],
    )
    logger.info("Run %s %s", state.run_id, "failed" if failed else "completed")
    return RunOutcome(state.run_id, out_dir, report["summary"] if report else None, list(bus.failures))


def print_summary(summary: Dict) -> None:
    table = Table(title=f"{summary['name']}: {summary['method']}")
    for column in ("seed", "status", "TV", "mean err", "cov err", "energy", "obs MSE", "calls"):
        table.add_column(column)
    for row in summary["runs"]:
        if row["status"] != "ok":
            table.add_row(str(row["seed"]), row["status"], *[""] * 5, row.get("error", "")[:40])
            continue
        table.add_row(
            str(row["seed"]),
            row["status"],
            f"{row['tv']:.3f}",
            f"{row['mean_err']:.4f}",
            f"{row['cov_err']:.4f}",
            f"{row['energy']:.4f}",
            f"{row['observed_mse']:.5f}",
            ", ".join(f"{k}={v}" for k, v in row["calls"].items()),
        )
    console.print(table)


def _load(path: str) -> Optional[ExperimentConfig]:
    try:
        return load_experiment(path)
    except ConfigError as e:
        logger.error("Invalid config %s: %s", path, e)
        return None


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args.config)
    if config is None:
        return EXIT_CONFIG
    method = args.method or config.method
    try:
        seeds = parse_seeds(args.seeds) if args.seeds is not None else config.seeds
    except ValueError as e:
        logger.error("Invalid --seeds: %s", e)
        return EXIT_CONFIG
    out_dir = Path(args.out) if args.out else default_out_dir(config)

    method_dir = out_dir / method
    if (method_dir / SUMMARY_FILE).exists():
        if not args.force:
            logger.error("%s already holds a %s run; pass --force to replace it", out_dir, method)
            return EXIT_FAILED
        shutil.rmtree(method_dir)

    outcome = run_experiment(config, method, seeds, out_dir, threads=args.threads)
    if outcome.summary is not None:
        print_summary(outcome.summary)
    if outcome.failures:
        for failure in outcome.failures:
            logger.error("%s failed on %s: %s", failure.agent, failure.message_type, failure.error)
        return EXIT_FAILED
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        table, excluded = compare_runs(args.run_dirs, force=args.force)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path(args.run_dirs[0]) / "comparison.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False, float_format="%.10g")
    logger.info("Wrote comparison of %d method(s) to %s", len(table), out)

    view = Table(title="comparison (mean ± std over seeds)")
    for column in ("problem", "method", "seeds", "TV", "mean err", "energy", "obs MSE"):
        view.add_column(column)
    for _, row in table.iterrows():
        view.add_row(
            str(row["name"]),
            str(row["method"]),
            str(row["n_seeds"]),
            f"{row['tv_mean']:.3f} ± {row['tv_std']:.3f}",
            f"{row['mean_err_mean']:.4f} ± {row['mean_err_std']:.4f}",
            f"{row['energy_mean']:.4f} ± {row['energy_std']:.4f}",
            f"{row['observed_mse_mean']:.5f} ± {row['observed_mse_std']:.5f}",
        )
    console.print(view)
    for item in excluded:
        console.print(f"[yellow]excluded[/yellow] {item}")
    return EXIT_OK if len(table) else EXIT_FAILED


def cmd_train_denoiser(args: argparse.Namespace) -> int:
    config = _load(args.config)
    if config is None:
        return EXIT_CONFIG
    schedule = build_schedule(config.schedule)
    prior = build_prior(config.prior)
    settings = dict(config.denoiser.get("train", {}))
    if args.steps is not None:
        settings["steps"] = args.steps
    if args.seed is not None:
        settings["seed"] = args.seed
    denoiser = train_on_prior(prior, schedule, settings)
    out = Path(args.out) if args.out else default_out_dir(config) / "mlp_weights.bin"
    save_mlp(denoiser, out)
    trace = denoiser.loss_trace
    if trace is not None and len(trace):
        head, tail = trace["loss"].iloc[: min(100, len(trace))].mean(), trace["loss"].iloc[-min(100, len(trace)):].mean()
        logger.info("Training loss %.4f -> %.4f", head, tail)
    console.print(f"weights written to {out}")
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    config = _load(args.config)
    if config is None:
        return EXIT_CONFIG
    problem = build_problem(config)
    out = Path(args.out) if args.out else default_out_dir(config) / "oracle"
    n = args.n if args.n is not None else config.oracle_samples
    save_json(
        out / "posterior.json",
        {
            "name": config.name,
            "problem_hash": problem.problem_hash,
            "y": problem.y.tolist(),
            "posterior": problem.posterior.to_dict(),
        },
    )
    save_array(out / "oracle_samples.bin", oracle_samples(problem.posterior, n, args.seed), problem.problem_hash, kind="oracle")
    console.print(f"exact posterior ({problem.posterior.n_components} components) written to {out}")
    return EXIT_OK


def cmd_selfcheck(args: argparse.Namespace) -> int:
    return EXIT_OK if run_selfcheck(console) else EXIT_FAILED


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="VIPaint posterior-sampling benchmark on Gaussian-mixture problems.")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="Run one method over seeds.")
    run.add_argument("--config", required=True, help="Experiment YAML file.")
    run.add_argument("--method", choices=METHODS, help="Overrides the config's method.")
    run.add_argument("--seeds", help='Seeds as "0..9" or "0,3,5"; defaults to the config.')
    run.add_argument("--out", help="Output directory; defaults to output_dir or $VIPAINT_OUTPUT_ROOT/<name>.")
    run.add_argument("--threads", type=int, default=DEFAULT_THREADS, help="Worker slots for seeds.")
    run.add_argument("--force", action="store_true", help="Replace an existing run of this method.")
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser("compare", help="Aggregate summaries into a CSV table.")
    compare.add_argument("run_dirs", nargs="+")
    compare.add_argument("--out", help="CSV path; defaults to <first run dir>/comparison.csv.")
    compare.add_argument("--force", action="store_true", help="Aggregate runs of different problems.")
    compare.set_defaults(func=cmd_compare)

    train = sub.add_parser("train-denoiser", help="Train an MLP denoiser on prior draws.")
    train.add_argument("--config", required=True)
    train.add_argument("--out", help="Weights file path.")
    train.add_argument("--steps", type=int)
    train.add_argument("--seed", type=int)
    train.set_defaults(func=cmd_train_denoiser)

    oracle = sub.add_parser("oracle", help="Dump the exact posterior and oracle draws.")
    oracle.add_argument("--config", required=True)
    oracle.add_argument("--out")
    oracle.add_argument("--n", type=int, help="Number of oracle draws.")
    oracle.add_argument("--seed", type=int, default=0)
    oracle.set_defaults(func=cmd_oracle)

    selfcheck = sub.add_parser("selfcheck", help="Run the numerical invariant suite.")
    selfcheck.set_defaults(func=cmd_selfcheck)

    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    args = parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except VipaintError as e:
        logger.error("%s", e)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
