# Run state management
"""
core.session_manager

Run creation, saving, loading, and status updates. The state file lives in
the run's output directory so outputs and their bookkeeping travel together.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Optional, Union
from uuid import uuid4

from core.models import RunState, utc_now

logger = logging.getLogger(__name__)

RUN_STATE_FILE = "run_state.json"


def _state_path(out_dir: Union[str, Path]) -> Path:
    return Path(out_dir) / RUN_STATE_FILE


def start_run(config_path: str, method: str, seeds: List[int], out_dir: Union[str, Path]) -> RunState:
    """
    Create a new run, save it to disk, and return its state.
    """
    state = RunState(
        run_id=str(uuid4()),
        config_path=str(config_path),
        method=method,
        seeds=list(seeds),
        out_dir=str(out_dir),
    )
    save_run(state)
    logger.info("Created run %s (%s, %d seeds) in %s", state.run_id, method, len(seeds), out_dir)
    return state


def load_run(out_dir: Union[str, Path]) -> Optional[RunState]:
    """
    Load run state from disk. Returns None if not found.
    """
    path = _state_path(out_dir)
    if not path.exists():
        logger.warning("Run state not found in %s", out_dir)
        return None

    with path.open("r", encoding="utf-8") as f:
        data = json.load(f)

    return RunState.from_dict(data)


def save_run(state: RunState) -> None:
    path = _state_path(state.out_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    state.updated_at = utc_now()

    with path.open("w", encoding="utf-8") as f:
        json.dump(state.to_dict(), f, indent=2)

    logger.debug("Saved run %s (status=%s)", state.run_id, state.status)


def update_run_status(out_dir: Union[str, Path], status: str, **metadata) -> Optional[RunState]:
    """
    Convenience helper to update the status field (and optional metadata).
    """
    state = load_run(out_dir)
    if state is None:
        return None

    state.status = status
    state.metadata.update(metadata)
    save_run(state)
    logger.info("Run %s status -> %s", state.run_id, status)
    return state
