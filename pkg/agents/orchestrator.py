# Coordinates all agents
import logging
from typing import Any, Dict

from core.models import AgentMessage

logger = logging.getLogger(__name__)


class Orchestrator:
    """
    Orchestrator

    Receives START from main, asks DataAgent to build the problem, and
    records the REPORT_READY that closes the run.
    """

    def __init__(self) -> None:
        # run_id -> REPORT_READY payload
        self.reports: Dict[str, Dict[str, Any]] = {}

    def handle_message(self, msg: AgentMessage, bus: "MessageBus") -> None:
        if msg.type == "START":
            self._handle_start(msg, bus)
        elif msg.type == "REPORT_READY":
            self._handle_report_ready(msg)
        else:
            logger.debug("Orchestrator ignoring message type %s", msg.type)

    def _handle_start(self, msg: AgentMessage, bus: "MessageBus") -> None:
        payload: Dict[str, Any] = msg.payload
        config = payload["config"]

        logger.info(
            "Orchestrator starting run %s: %s on '%s', seeds %s",
            msg.run_id,
            payload["method"],
            config.name,
            payload["seeds"],
        )

        bus.send(
            AgentMessage(
                sender="Orchestrator",
                receiver="DataAgent",
                type="LOAD_PROBLEM",
                payload=payload,
                run_id=msg.run_id,
            )
        )

    def _handle_report_ready(self, msg: AgentMessage) -> None:
        self.reports[msg.run_id] = msg.payload
        failed = msg.payload.get("failed_seeds", [])
        if failed:
            logger.warning("Run %s finished with failed seeds %s", msg.run_id, failed)
        logger.info("Orchestrator received summary for run %s: %s", msg.run_id, msg.payload["summary_path"])
