# Script: runs every method on the benchmark fixtures, checks directional claims
"""
eval.run_eval

Offline benchmark for vipaint_bench.

Runs VIPaint and the baselines on the fixtures listed in eval/scenarios.json,
aggregates them with compare_runs and evaluates two directional claims per
fixture:

- multimodality: VIPaint's mean mode-coverage TV is strictly below RED-Diff's
- dominance: VIPaint's energy distance to oracle draws is no larger than each
  baseline's on at least `min_wins` of the seeds

Run via:
    python -m eval.run_eval
or from the repo root:
    python eval/run_eval.py
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

# Ensure project root is on sys.path when executed as script
ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from core.config import DEFAULT_OUTPUT_ROOT, setup_logging  # type: ignore  # noqa: E402
from core.experiment_config import VIPAINT, load_experiment  # type: ignore  # noqa: E402
from agents.report_agent import compare_runs  # type: ignore  # noqa: E402
from main import run_experiment  # type: ignore  # noqa: E402
from tools.storage_tool import load_json, save_json  # type: ignore  # noqa: E402


logger = logging.getLogger(__name__)

EVAL_DIR = ROOT_DIR / "eval"
SCENARIOS_FILE = EVAL_DIR / "scenarios.json"
RESULTS_FILE = EVAL_DIR / "results.json"
BENCHMARK_ROOT = DEFAULT_OUTPUT_ROOT / "benchmark"

DOMINANCE_BASELINES = ["blended", "dps", "reddiff"]


def _ensure_sample_scenarios() -> None:
    """
    If eval/scenarios.json doesn't exist, create the default fixture list.
    """
    if SCENARIOS_FILE.exists():
        return

    sample = [
        {
            "name": "bimodal_mask",
            "config": "configs/bimodal_mask.yaml",
            "methods": ["vipaint", "blended", "repaint", "dps", "reddiff", "reddiff-v"],
            "claims": {"tv_baseline": "reddiff", "min_wins": 8},
        },
    ]
    save_json(SCENARIOS_FILE, sample)
    logger.warning("Created sample evaluation scenarios at %s", SCENARIOS_FILE)


def _per_seed(summary: Optional[Dict[str, Any]], metric: str) -> Dict[int, float]:
    if not summary:
        return {}
    return {r["seed"]: r[metric] for r in summary["runs"] if r.get("status") == "ok" and r.get(metric) is not None}


def dominance_wins(ours: Dict[int, float], theirs: Dict[int, float]) -> int:
    """Seeds on which `ours` is no larger than `theirs`."""
    return sum(1 for seed, value in ours.items() if seed in theirs and value <= theirs[seed])


def evaluate_claims(summaries: Dict[str, Dict[str, Any]], claims: Dict[str, Any]) -> Dict[str, Any]:
    """Directional checks on one fixture's per-method summaries."""
    out: Dict[str, Any] = {}
    tv_baseline = claims.get("tv_baseline")
    if tv_baseline and VIPAINT in summaries and tv_baseline in summaries:
        ours = summaries[VIPAINT]["aggregate"]["tv"]["mean"]
        theirs = summaries[tv_baseline]["aggregate"]["tv"]["mean"]
        out["tv"] = {
            "vipaint": ours,
            tv_baseline: theirs,
            "holds": ours is not None and theirs is not None and ours < theirs,
        }

    min_wins = int(claims.get("min_wins", 0))
    if min_wins and VIPAINT in summaries:
        ours = _per_seed(summaries[VIPAINT], "energy")
        dominance = {}
        for baseline in DOMINANCE_BASELINES:
            if baseline not in summaries:
                continue
            wins = dominance_wins(ours, _per_seed(summaries[baseline], "energy"))
            dominance[baseline] = {"wins": wins, "of": len(ours), "holds": wins >= min_wins}
        out["energy_dominance"] = dominance
    return out


def run_fixture(fixture: Dict[str, Any], out_root: Path, threads: int = 1) -> Dict[str, Any]:
    """Run every listed method of one fixture and return its results entry."""
    config_path = Path(fixture["config"])
    if not config_path.is_absolute():
        config_path = ROOT_DIR / config_path
    config = load_experiment(config_path)
    out_dir = out_root / fixture.get("name", config.name)

    summaries: Dict[str, Dict[str, Any]] = {}
    failures: Dict[str, List[str]] = {}
    for method in fixture.get("methods", [VIPAINT]):
        logger.info("Benchmark %s: running %s", config.name, method)
        outcome = run_experiment(config, method, config.seeds, out_dir, threads=threads)
        if outcome.summary is not None:
            summaries[method] = outcome.summary
        if outcome.failures:
            failures[method] = [f"{f.agent}: {f.error}" for f in outcome.failures]

    table, excluded = compare_runs([out_dir])
    table.to_csv(out_dir / "comparison.csv", index=False, float_format="%.10g")

    return {
        "name": config.name,
        "config": str(config_path.relative_to(ROOT_DIR)) if config_path.is_relative_to(ROOT_DIR) else str(config_path),
        "problem_hash": config.problem_hash,
        "out_dir": str(out_dir),
        "comparison": table.to_dict(orient="records"),
        "excluded": excluded,
        "failures": failures,
        "claims": evaluate_claims(summaries, fixture.get("claims", {})),
    }


def run_evaluation(out_root: Path = BENCHMARK_ROOT) -> Dict[str, Any]:
    """
    Load fixtures, run all methods, and save results.
    """
    _ensure_sample_scenarios()
    fixtures = load_json(SCENARIOS_FILE) or []

    results = [run_fixture(fixture, out_root) for fixture in fixtures]
    summary = _summarize_results(results)
    payload = {"results": results, "summary": summary}
    save_json(RESULTS_FILE, payload)
    logger.info("Saved evaluation results to %s", RESULTS_FILE)
    return payload


def _summarize_results(results: List[Dict[str, Any]]) -> Dict[str, Any]:
    checked = held = 0
    for r in results:
        claims = r["claims"]
        outcomes = [claims["tv"]["holds"]] if "tv" in claims else []
        outcomes += [d["holds"] for d in claims.get("energy_dominance", {}).values()]
        checked += len(outcomes)
        held += sum(outcomes)
    return {
        "num_fixtures": len(results),
        "claims_checked": checked,
        "claims_held": held,
        "runs_with_failures": sum(1 for r in results if r["failures"]),
    }


def main() -> None:
    setup_logging()
    logger.info("Starting vipaint_bench benchmark")
    payload = run_evaluation()
    s = payload["summary"]
    logger.info(
        "%d fixture(s): %d/%d directional claims held",
        s["num_fixtures"],
        s["claims_held"],
        s["claims_checked"],
    )


if __name__ == "__main__":
    main()
