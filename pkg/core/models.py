# Message schemas, dataclasses
"""
core.models

Shared data models: bus messages, run state, the parsed experiment
configuration and the in-memory objects agents hand to each other.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional

if TYPE_CHECKING:
    import numpy as np
    import pandas as pd

    from tools.denoiser_tool import Denoiser
    from tools.gmm_tool import GmmPosterior, GmmPrior
    from tools.operator_tool import MeasurementOp
    from tools.schedule_tool import NoiseSchedule


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass
class AgentMessage:
    """
    AgentMessage

    Generic agent-to-agent message routed by the MessageBus.
    """
    sender: str
    receiver: str
    type: str
    payload: Dict[str, Any]
    run_id: str
    timestamp: Optional[str] = None

    def __post_init__(self) -> None:
        if self.timestamp is None:
            self.timestamp = utc_now()


@dataclass
class RunState:
    """
    RunState

    Status bookkeeping for one `run` invocation, stored as run_state.json
    next to the outputs it describes.
    """
    run_id: str
    config_path: str
    method: str
    seeds: List[int]
    out_dir: str
    status: str = "created"   # created, running, completed, failed
    created_at: str = ""
    updated_at: str = ""
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        now = utc_now()
        if not self.created_at:
            self.created_at = now
        if not self.updated_at:
            self.updated_at = now

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunState":
        return cls(**data)


@dataclass
class ExperimentConfig:
    """Validated experiment file. Sections stay plain dicts until DataAgent builds them."""
    name: str
    schedule: Dict[str, Any]
    prior: Dict[str, Any]
    denoiser: Dict[str, Any]
    operator: Dict[str, Any]
    observation: Dict[str, Any]
    method: str
    methods: Dict[str, Dict[str, Any]]
    seeds: List[int]
    n_samples: int
    output_dir: Optional[str] = None
    data_range: Optional[float] = None
    oracle_samples: int = 1000
    schema_version: int = 1
    source: Optional[str] = None
    problem_hash: str = ""

    def settings_for(self, method: str) -> Dict[str, Any]:
        return dict(self.methods.get(method, {}))


@dataclass(eq=False)
class Problem:
    """Everything a method needs to run, plus the exact posterior for scoring."""
    name: str
    schedule: "NoiseSchedule"
    prior: "GmmPrior"
    denoiser: "Denoiser"
    op: "MeasurementOp"
    y: "np.ndarray"
    posterior: "GmmPosterior"
    problem_hash: str
    x_true: Optional["np.ndarray"] = None
    data_range: Optional[float] = None


@dataclass
class Scenario:
    """One (method, seed) execution planned by ScenarioAgent."""
    method: str
    seed: int
    settings: Dict[str, Any]
    n_samples: int
    run_dir: Path


@dataclass(eq=False)
class MethodResult:
    method: str
    seed: int
    samples: "np.ndarray"
    run_dir: Optional[Path] = None
    calls: Dict[str, int] = field(default_factory=dict)
    trace: Optional["pd.DataFrame"] = None
    wall_time: float = 0.0
