# Writes run artifacts and aggregates finished runs
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.config import SCHEMA_VERSION
from core.errors import ConfigError
from core.models import AgentMessage, ExperimentConfig, MethodResult, Problem
from tools.plot_tool import save_scatter
from tools.storage_tool import load_json, save_json, save_samples, save_trace

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
TIMING_FILE = "timing.json"
SAMPLES_FILE = "samples.bin"
TRACE_FILE = "trace.csv"
SCATTER_FILE = "scatter.svg"
AGGREGATE_METRICS = ["tv", "mean_err", "cov_err", "energy", "observed_mse", "psnr"]


def aggregate(rows: List[Dict[str, Any]]) -> Dict[str, Dict[str, Optional[float]]]:
    """Mean and population std over successful seeds, per metric."""
    ok = [r for r in rows if r.get("status") == "ok"]
    out: Dict[str, Dict[str, Optional[float]]] = {}
    for metric in AGGREGATE_METRICS:
        values = np.array([r[metric] for r in ok if r.get(metric) is not None], dtype=float)
        if values.size == 0:
            out[metric] = {"mean": None, "std": None, "n": 0}
        else:
            out[metric] = {"mean": float(values.mean()), "std": float(values.std()), "n": int(values.size)}
    return out


class ReportAgent:
    """
    ReportAgent

    Persists every seed's samples, loss trace and (for 2-D problems) SVG
    scatter, then the method's summary.json and timing.json, and notifies
    the Orchestrator.
    """

    def handle_message(self, msg: AgentMessage, bus: "MessageBus") -> None:
        if msg.type != "EVAL_SUMMARY":
            logger.debug("ReportAgent ignoring message type %s", msg.type)
            return

        config: ExperimentConfig = msg.payload["config"]
        problem: Problem = msg.payload["problem"]
        entries: List[Dict[str, Any]] = msg.payload["entries"]
        out_dir = Path(msg.payload["out_dir"])

        rows, timing = [], {}
        method = entries[0]["row"]["method"] if entries else config.method
        for entry in entries:
            row = dict(entry["row"])
            result: Optional[MethodResult] = entry["result"]
            if result is not None:
                row.update(self._write_seed(problem, result, entry["oracle"], out_dir / method))
                timing[f"seed_{result.seed}"] = result.wall_time
            rows.append(row)

        summary = {
            "schema_version": SCHEMA_VERSION,
            "name": config.name,
            "method": method,
            "problem_hash": problem.problem_hash,
            "seeds": [r["seed"] for r in rows],
            "runs": rows,
            "aggregate": aggregate(rows),
        }
        summary_path = save_json(out_dir / method / SUMMARY_FILE, summary)
        save_json(out_dir / method / TIMING_FILE, timing)
        logger.info("ReportAgent wrote %s", summary_path)

        failed = [r["seed"] for r in rows if r["status"] != "ok"]
        bus.send(
            AgentMessage(
                sender="ReportAgent",
                receiver="Orchestrator",
                type="REPORT_READY",
                payload={"summary_path": str(summary_path), "summary": summary, "failed_seeds": failed},
                run_id=msg.run_id,
            )
        )

    def _write_seed(
        self, problem: Problem, result: MethodResult, oracle: np.ndarray, method_dir: Path
    ) -> Dict[str, str]:
        run_dir = Path(result.run_dir)
        files = {}
        path = save_samples(run_dir / SAMPLES_FILE, result.samples, problem.problem_hash, result.method, result.seed)
        files["samples"] = path.relative_to(method_dir).as_posix()
        if result.trace is not None:
            path = save_trace(run_dir / TRACE_FILE, result.trace)
            files["trace"] = path.relative_to(method_dir).as_posix()
        if problem.op.dim == 2:
            path = save_scatter(
                run_dir / SCATTER_FILE,
                oracle,
                result.samples,
                op=problem.op,
                y=problem.y,
                title=f"{problem.name}: {result.method}, seed {result.seed}",
            )
            files["scatter"] = path.relative_to(method_dir).as_posix()
        return files


def _summary_files(path: Path) -> List[Path]:
    if (path / SUMMARY_FILE).is_file():
        return [path / SUMMARY_FILE]
    return sorted(path.glob(f"*/{SUMMARY_FILE}"))


def compare_runs(
    run_dirs: Sequence[Union[str, Path]], force: bool = False
) -> Tuple[pd.DataFrame, List[str]]:
    """
    Aggregate summary.json files into one row per (problem, method).

    Accepts method directories or run output directories holding several.
    Failed seeds, seeds whose sample file is gone and unreadable summaries
    are excluded and listed. Summaries for different problems are refused
    unless `force` is set.
    """
    excluded: List[str] = []
    rows: List[Dict[str, Any]] = []
    reference: Optional[str] = None

    for run_dir in map(Path, run_dirs):
        files = _summary_files(run_dir)
        if not files:
            excluded.append(f"{run_dir}: no {SUMMARY_FILE}")
            continue
        for file in files:
            summary = load_json(file)
            if summary is None or "runs" not in summary:
                excluded.append(f"{file}: unreadable summary")
                continue
            problem_hash = summary.get("problem_hash")
            if reference is None:
                reference = problem_hash
            elif problem_hash != reference:
                if not force:
                    raise ConfigError(
                        f"{file} is for problem {str(problem_hash)[:12]}, expected {str(reference)[:12]}; use --force to aggregate anyway",
                        field="problem_hash",
                    )
                logger.warning("Aggregating %s despite problem hash mismatch", file)
            for run in summary["runs"]:
                label = f"{summary['method']} seed {run['seed']} ({file.parent})"
                if run.get("status") != "ok":
                    excluded.append(f"{label}: {run.get('error', 'failed')}")
                    continue
                if not (file.parent / run.get("samples", SAMPLES_FILE)).is_file():
                    excluded.append(f"{label}: sample file missing")
                    continue
                rows.append({"name": summary.get("name"), "problem_hash": problem_hash, "method": summary["method"], **run})

    for item in excluded:
        logger.warning("Excluded from comparison: %s", item)

    columns = ["name", "method", "n_seeds"] + [f"{m}_{s}" for m in AGGREGATE_METRICS for s in ("mean", "std")]
    columns += ["calls_phase1_per_chain", "calls_sampling"]
    if not rows:
        return pd.DataFrame(columns=columns), excluded

    frame = pd.DataFrame(rows)
    for key in ("phase1_per_chain", "sampling"):
        frame[f"calls_{key}"] = [c.get(key) if isinstance(c, dict) else None for c in frame.get("calls", [None] * len(frame))]
    for metric in AGGREGATE_METRICS:
        frame[metric] = pd.to_numeric(frame[metric], errors="coerce")

    grouped = frame.groupby(["name", "method"], sort=True)
    table = pd.DataFrame({"n_seeds": grouped.size()})
    for metric in AGGREGATE_METRICS:
        table[f"{metric}_mean"] = grouped[metric].mean()
        table[f"{metric}_std"] = grouped[metric].std(ddof=0)
    table["calls_phase1_per_chain"] = grouped["calls_phase1_per_chain"].max()
    table["calls_sampling"] = grouped["calls_sampling"].max()
    table = table.reset_index()
    return table[columns], excluded
