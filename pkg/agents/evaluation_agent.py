# Scores sample sets against the exact posterior
# Goal: Turn each seed's samples into posterior-fidelity metrics.
import logging
from typing import Any, Dict, List, Optional

import numpy as np

from core.models import AgentMessage, MethodResult, Problem
from tools.metrics_tool import energy_distance, mode_coverage, moment_error, observed_mse, oracle_samples, psnr

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["tv", "mean_err", "cov_err", "energy", "observed_mse", "psnr"]


def evaluate_samples(
    problem: Problem, samples: np.ndarray, oracle: np.ndarray
) -> Dict[str, Optional[float]]:
    """Deterministic metrics of one sample set."""
    freqs, tv = mode_coverage(samples, problem.posterior)
    mean_err, cov_err = moment_error(samples, problem.posterior)
    row: Dict[str, Any] = {
        "tv": tv,
        "mode_freqs": freqs.tolist(),
        "mean_err": mean_err,
        "cov_err": cov_err,
        "energy": energy_distance(samples, oracle),
        "observed_mse": observed_mse(samples, problem.op, problem.y),
        "psnr": None,
    }
    if problem.x_true is not None and problem.data_range is not None:
        row["psnr"] = psnr(samples, problem.x_true, problem.data_range)
    return row


class EvaluationAgent:
    """
    EvaluationAgent

    Collects SIM_RESULT messages, scores each seed against oracle draws from
    the exact posterior, and once every expected seed has arrived sends the
    seed-ordered rows to ReportAgent.
    """

    def __init__(self) -> None:
        # run_id -> dict with expected count and collected entries
        self._runs: Dict[str, Dict[str, Any]] = {}

    def handle_message(self, msg: AgentMessage, bus: "MessageBus") -> None:
        if msg.type == "SCENARIO_COUNT":
            self._handle_scenario_count(msg)
        elif msg.type == "SIM_RESULT":
            self._handle_sim_result(msg, bus)
        else:
            logger.debug("EvaluationAgent ignoring message type %s", msg.type)

    def _handle_scenario_count(self, msg: AgentMessage) -> None:
        expected = int(msg.payload["count"])
        state = self._runs.setdefault(msg.run_id, {"expected": None, "entries": []})
        state["expected"] = expected
        logger.info("EvaluationAgent expecting %d results for run %s", expected, msg.run_id)

    def _handle_sim_result(self, msg: AgentMessage, bus: "MessageBus") -> None:
        state = self._runs.setdefault(msg.run_id, {"expected": None, "entries": []})
        entry = self._score(msg.payload)
        if "exception" in entry:
            bus.record_failure("EvaluationAgent", msg, entry.pop("exception"))
        state["entries"].append(entry)

        expected = state["expected"]
        entries = state["entries"]
        logger.debug("EvaluationAgent received %d/%s results for run %s", len(entries), expected, msg.run_id)

        if expected is not None and len(entries) >= expected:
            entries.sort(key=lambda e: e["row"]["seed"])
            bus.send(
                AgentMessage(
                    sender="EvaluationAgent",
                    receiver="ReportAgent",
                    type="EVAL_SUMMARY",
                    payload={
                        "config": msg.payload["config"],
                        "problem": msg.payload["problem"],
                        "out_dir": msg.payload["out_dir"],
                        "entries": entries,
                    },
                    run_id=msg.run_id,
                )
            )
            del self._runs[msg.run_id]

    def _score(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        scenario = payload["scenario"]
        problem: Problem = payload["problem"]
        config = payload["config"]
        base = {"method": scenario.method, "seed": scenario.seed, "n_samples": scenario.n_samples}

        if "error" in payload:
            return {"row": {**base, "status": "failed", "error": str(payload["error"])}, "result": None, "oracle": None}

        result: MethodResult = payload["result"]
        oracle = oracle_samples(problem.posterior, config.oracle_samples, scenario.seed)
        try:
            metrics = evaluate_samples(problem, result.samples, oracle)
        except Exception as e:  # noqa: BLE001
            logger.exception("Scoring %s seed %d failed: %s", scenario.method, scenario.seed, e)
            return {"row": {**base, "status": "failed", "error": str(e)}, "result": None, "oracle": None, "exception": e}

        row = {**base, "status": "ok", **metrics, "calls": dict(result.calls)}
        logger.info(
            "%s seed %d: TV %.3f, mean err %.3f, energy %.4f",
            scenario.method,
            scenario.seed,
            row["tv"],
            row["mean_err"],
            row["energy"],
        )
        return {"row": row, "result": result, "oracle": oracle}

    @staticmethod
    def failed_seeds(entries: List[Dict[str, Any]]) -> List[int]:
        return [e["row"]["seed"] for e in entries if e["row"]["status"] != "ok"]
