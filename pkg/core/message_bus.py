# Message passing + routing
"""
core.message_bus

MessageBus for registering agents and routing AgentMessage objects between them.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional

from core.models import AgentMessage

logger = logging.getLogger(__name__)


@dataclass
class Failure:
    """An exception raised by an agent while handling one message."""
    agent: str
    message_type: str
    run_id: str
    error: BaseException


class MessageBus:
    """
    In-memory FIFO bus between the pipeline agents.

    Agents implement `handle_message(msg, bus)` and reply with `bus.send`.
    Handler exceptions and messages for unregistered receivers are logged
    and kept in `failures`; main.py turns a non-empty list into exit status 1.
    """

    def __init__(self) -> None:
        self.agents: Dict[str, object] = {}
        self.queue: Deque[AgentMessage] = deque()
        self.failures: List[Failure] = []

    def register_agent(self, name: str, agent: object) -> None:
        if name in self.agents:
            logger.warning("Overwriting existing agent registration: %s", name)
        self.agents[name] = agent
        logger.debug("Registered agent: %s", name)

    def send(self, msg: AgentMessage) -> None:
        logger.debug("Enqueued %s from %s to %s (run %s)", msg.type, msg.sender, msg.receiver, msg.run_id)
        self.queue.append(msg)

    def record_failure(self, agent: str, msg: AgentMessage, error: BaseException) -> None:
        self.failures.append(Failure(agent, msg.type, msg.run_id, error))

    def run(self, run_id: Optional[str] = None, max_steps: Optional[int] = None) -> int:
        """
        Dispatch queued messages until the queue holds nothing for `run_id`.

        Messages of other runs stay queued in order. Returns the number of
        messages dispatched.
        """
        dispatched = 0
        deferred = 0
        while self.queue and deferred < len(self.queue):
            if max_steps is not None and dispatched >= max_steps:
                logger.warning("MessageBus reached max_steps=%d, stopping dispatch", max_steps)
                break

            msg = self.queue.popleft()
            if run_id is not None and msg.run_id != run_id:
                self.queue.append(msg)
                deferred += 1
                continue
            deferred = 0
            dispatched += 1

            agent = self.agents.get(msg.receiver)
            if agent is None:
                logger.error("No agent named '%s' for %s (run %s)", msg.receiver, msg.type, msg.run_id)
                self.record_failure(msg.receiver, msg, LookupError(f"no agent named {msg.receiver!r}"))
                continue

            logger.debug("Dispatching %s from %s to %s (run %s)", msg.type, msg.sender, msg.receiver, msg.run_id)
            try:
                agent.handle_message(msg, self)  # type: ignore[attr-defined]
            except Exception as e:  # noqa: BLE001
                logger.exception("Error handling message %s by agent %s: %s", msg.type, msg.receiver, e)
                self.record_failure(msg.receiver, msg, e)
        return dispatched
