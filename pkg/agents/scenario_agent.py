# Plans one scenario per seed
# Goal: Expand (method, seeds) into independent executions with their own output directories.
import logging
from pathlib import Path
from typing import Any, Dict, List

from core.models import AgentMessage, ExperimentConfig, Scenario

logger = logging.getLogger(__name__)


def seed_dir(out_dir: Path, method: str, seed: int) -> Path:
    return Path(out_dir) / method / f"seed_{seed}"


class ScenarioAgent:
    """
    ScenarioAgent

    Given a PROBLEM, plans one Scenario per seed, tells EvaluationAgent how
    many results to expect and hands the batch to SimulationAgent.
    """

    def handle_message(self, msg: AgentMessage, bus: "MessageBus") -> None:
        if msg.type != "PROBLEM":
            logger.debug("ScenarioAgent ignoring message type %s", msg.type)
            return

        config: ExperimentConfig = msg.payload["config"]
        method: str = msg.payload["method"]
        seeds: List[int] = msg.payload["seeds"]
        out_dir = Path(msg.payload["out_dir"])

        scenarios = self._plan(config, method, seeds, out_dir)

        bus.send(
            AgentMessage(
                sender="ScenarioAgent",
                receiver="EvaluationAgent",
                type="SCENARIO_COUNT",
                payload={"count": len(scenarios)},
                run_id=msg.run_id,
            )
        )

        out_payload: Dict[str, Any] = {
            "config": config,
            "problem": msg.payload["problem"],
            "method": method,
            "out_dir": str(out_dir),
            "threads": msg.payload.get("threads", 1),
            "scenarios": scenarios,
        }
        bus.send(
            AgentMessage(
                sender="ScenarioAgent",
                receiver="SimulationAgent",
                type="SCENARIOS",
                payload=out_payload,
                run_id=msg.run_id,
            )
        )
        logger.info("ScenarioAgent planned %d %s scenarios (run %s)", len(scenarios), method, msg.run_id)

    def _plan(self, config: ExperimentConfig, method: str, seeds: List[int], out_dir: Path) -> List[Scenario]:
        settings = config.settings_for(method)
        n_samples = int(settings.pop("n_samples", config.n_samples))
        return [
            Scenario(
                method=method,
                seed=seed,
                settings=dict(settings),
                n_samples=n_samples,
                run_dir=seed_dir(out_dir, method, seed),
            )
            for seed in seeds
        ]
