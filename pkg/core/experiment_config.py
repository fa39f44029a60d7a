# Experiment file loading and validation
"""
core.experiment_config

Loads a YAML experiment file into an ExperimentConfig.

Every check that fails raises ConfigError carrying the dotted field path and
the 1-based line of the offending YAML node, e.g.
`field 'operator.sigma_v', line 14: must be positive`.

The builders at the bottom turn validated sections into tool objects.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml

from core.config import SCHEMA_VERSION
from core.errors import ConfigError, DomainError
from core.models import ExperimentConfig
from tools.baseline_tool import BaselineConfig
from tools.gmm_tool import GmmPrior
from tools.operator_tool import MeasurementOp, ObsModel
from tools.schedule_tool import NoiseSchedule
from tools.storage_tool import file_digest, load_mask
from tools.vipaint_tool import VipaintConfig

logger = logging.getLogger(__name__)

VIPAINT = "vipaint"
METHODS = (VIPAINT, "blended", "repaint", "dps", "reddiff", "reddiff-v")

_SEED_RANGE = re.compile(r"^\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*$")

PathPart = Union[str, int]


def parse_seeds(value: Any) -> List[int]:
    """Accepts an int, a list of ints, "a..b" (inclusive) or "a,b,c"."""
    if isinstance(value, bool):
        raise ValueError("seeds must be integers")
    if isinstance(value, int):
        return [value]
    if isinstance(value, (list, tuple)):
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ValueError("seeds must be integers")
        seeds = list(value)
    elif isinstance(value, str):
        match = _SEED_RANGE.match(value)
        if match:
            lo, hi = int(match.group(1)), int(match.group(2))
            if hi < lo:
                raise ValueError(f"empty seed range '{value}'")
            seeds = list(range(lo, hi + 1))
        else:
            try:
                seeds = [int(part) for part in value.split(",") if part.strip()]
            except ValueError as exc:
                raise ValueError(f"cannot parse seeds '{value}'") from exc
    else:
        raise ValueError(f"cannot parse seeds from {type(value).__name__}")
    if not seeds:
        raise ValueError("no seeds given")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    return seeds


class _Locator:
    """Maps dotted field paths to source lines using the composed YAML node tree."""

    def __init__(self, root: Optional[yaml.Node]) -> None:
        self.root = root

    def line(self, path: Sequence[PathPart]) -> Optional[int]:
        node = self.root
        best = node.start_mark.line + 1 if node is not None else None
        for part in path:
            child = None
            if isinstance(node, yaml.MappingNode):
                for key, value in node.value:
                    if key.value == part:
                        child = value
                        break
            elif isinstance(node, yaml.SequenceNode) and isinstance(part, int):
                if 0 <= part < len(node.value):
                    child = node.value[part]
            if child is None:
                break
            node = child
            best = node.start_mark.line + 1
        return best


def _dotted(path: Sequence[PathPart]) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


class _Checker:
    def __init__(self, locator: _Locator, base_dir: Path) -> None:
        self.locator = locator
        self.base_dir = base_dir

    def fail(self, path: Sequence[PathPart], message: str) -> ConfigError:
        return ConfigError(message, field=_dotted(path), line=self.locator.line(path))

    def section(self, data: Dict[str, Any], key: str, required: bool = True) -> Dict[str, Any]:
        if key not in data or data[key] is None:
            if required:
                raise self.fail([key], "missing section")
            return {}
        value = data[key]
        if not isinstance(value, dict):
            raise self.fail([key], "must be a mapping")
        return value

    def number(self, data: Dict[str, Any], path: List[PathPart], default: Any = None, positive: bool = False) -> Any:
        key = path[-1]
        if key not in data or data[key] is None:
            if default is None:
                raise self.fail(path, "missing value")
            return default
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.fail(path, f"must be a number, got {value!r}")
        if positive and not value > 0:
            raise self.fail(path, f"must be positive, got {value}")
        return value

    def integer(self, data: Dict[str, Any], path: List[PathPart], default: Optional[int] = None, minimum: int = 1) -> int:
        key = path[-1]
        if key not in data or data[key] is None:
            if default is None:
                raise self.fail(path, "missing value")
            return default
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.fail(path, f"must be an integer, got {value!r}")
        if value < minimum:
            raise self.fail(path, f"must be at least {minimum}, got {value}")
        return value

    def choice(self, data: Dict[str, Any], path: List[PathPart], options: Sequence[str], default: Optional[str] = None) -> str:
        key = path[-1]
        value = data.get(key, default)
        if value is None:
            raise self.fail(path, "missing value")
        if value not in options:
            raise self.fail(path, f"must be one of {', '.join(options)}; got {value!r}")
        return value

    def existing_file(self, value: Any, path: List[PathPart]) -> str:
        if not isinstance(value, str) or not value:
            raise self.fail(path, "must be a file path")
        resolved = Path(value)
        if not resolved.is_absolute():
            resolved = self.base_dir / resolved
        if not resolved.is_file():
            raise self.fail(path, f"referenced file does not exist: {resolved}")
        return str(resolved)

    def vector(self, value: Any, path: List[PathPart], size: Optional[int] = None) -> List[float]:
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise self.fail(path, "must be a list of numbers") from None
        if arr.ndim != 1:
            raise self.fail(path, "must be a flat list of numbers")
        if size is not None and arr.size != size:
            raise self.fail(path, f"must have {size} entries, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise self.fail(path, "entries must be finite")
        return arr.tolist()


def _check_schedule(checker: _Checker, data: Dict[str, Any]) -> Dict[str, Any]:
    section = checker.section(data, "schedule")
    kind = checker.choice(section, ["schedule", "kind"], ("VE", "VP"))
    out: Dict[str, Any] = {"kind": kind, "T": float(checker.number(section, ["schedule", "T"], 1.0, positive=True))}
    if kind == "VE":
        out["sigma_min"] = float(checker.number(section, ["schedule", "sigma_min"], 0.002, positive=True))
        out["sigma_max"] = float(checker.number(section, ["schedule", "sigma_max"], 50.0, positive=True))
    else:
        out["var_min"] = float(checker.number(section, ["schedule", "var_min"], 1e-4, positive=True))
        out["var_max"] = float(checker.number(section, ["schedule", "var_max"], 0.999, positive=True))
    try:
        build_schedule(out)
    except DomainError as exc:
        raise checker.fail(["schedule"], str(exc)) from None
    return out


def _check_prior(checker: _Checker, data: Dict[str, Any]) -> Dict[str, Any]:
    section = checker.section(data, "prior")
    for key in ("weights", "means", "covs"):
        if key not in section:
            raise checker.fail(["prior", key], "missing value")
    out = {"weights": section["weights"], "means": section["means"], "covs": section["covs"]}
    try:
        build_prior(out)
    except (DomainError, TypeError, ValueError) as exc:
        raise checker.fail(["prior"], str(exc)) from None
    return out


def _check_denoiser(checker: _Checker, data: Dict[str, Any]) -> Dict[str, Any]:
    section = checker.section(data, "denoiser", required=False) or {"kind": "exact"}
    kind = checker.choice(section, ["denoiser", "kind"], ("exact", "mlp"), default="exact")
    out: Dict[str, Any] = {"kind": kind}
    if kind == "mlp":
        has_weights, has_train = "weights" in section, "train" in section
        if has_weights == has_train:
            raise checker.fail(["denoiser"], "mlp denoiser needs exactly one of 'weights' or 'train'")
        if has_weights:
            out["weights"] = checker.existing_file(section["weights"], ["denoiser", "weights"])
        else:
            train = section["train"] or {}
            if not isinstance(train, dict):
                raise checker.fail(["denoiser", "train"], "must be a mapping")
            p = ["denoiser", "train"]
            out["train"] = {
                "steps": checker.integer(train, p + ["steps"], 5000),
                "lr": float(checker.number(train, p + ["lr"], 1e-3, positive=True)),
                "batch": checker.integer(train, p + ["batch"], 128),
                "n_data": checker.integer(train, p + ["n_data"], 4096),
                "seed": checker.integer(train, p + ["seed"], 0, minimum=0),
            }
            if "hidden" in train:
                hidden = train["hidden"]
                if not isinstance(hidden, list) or not all(isinstance(h, int) and h > 0 for h in hidden):
                    raise checker.fail(p + ["hidden"], "must be a list of positive integers")
                out["train"]["hidden"] = hidden
    return out


def _check_operator(checker: _Checker, data: Dict[str, Any], dim: int) -> Dict[str, Any]:
    section = checker.section(data, "operator")
    kind = checker.choice(section, ["operator", "kind"], ("mask", "blur", "downsample"))
    out: Dict[str, Any] = {
        "kind": kind,
        "sigma_v": float(checker.number(section, ["operator", "sigma_v"], positive=True)),
        "obs_model": checker.choice(section, ["operator", "obs_model"], ("gaussian", "laplace"), default="gaussian"),
    }
    if section.get("laplace_scale") is not None:
        out["laplace_scale"] = float(checker.number(section, ["operator", "laplace_scale"], positive=True))
    if "image_shape" in section:
        shape = section["image_shape"]
        if not (isinstance(shape, list) and len(shape) == 2 and all(isinstance(v, int) and v > 0 for v in shape)):
            raise checker.fail(["operator", "image_shape"], "must be [rows, cols]")
        if shape[0] * shape[1] != dim:
            raise checker.fail(["operator", "image_shape"], f"{shape} does not match data dimension {dim}")
        out["image_shape"] = shape
    if kind == "mask":
        has_list, has_file = "mask" in section, "mask_file" in section
        if has_list == has_file:
            raise checker.fail(["operator"], "mask operator needs exactly one of 'mask' or 'mask_file'")
        if has_list:
            mask = checker.vector(section["mask"], ["operator", "mask"], size=dim)
            if any(v not in (0.0, 1.0) for v in mask):
                raise checker.fail(["operator", "mask"], "entries must be 0 or 1")
            out["mask"] = [int(v) for v in mask]
        else:
            out["mask_file"] = checker.existing_file(section["mask_file"], ["operator", "mask_file"])
    elif kind == "blur":
        out["size"] = checker.integer(section, ["operator", "size"], 3)
        out["std"] = float(checker.number(section, ["operator", "std"], 1.0, positive=True))
    else:
        out["factor"] = checker.integer(section, ["operator", "factor"], 2)
    try:
        build_operator(out, dim)
    except DomainError as exc:
        raise checker.fail(["operator"], str(exc)) from None
    return out


def _check_observation(checker: _Checker, data: Dict[str, Any], dim: int, out_dim: int) -> Dict[str, Any]:
    section = checker.section(data, "observation")
    given = [key for key in ("y", "x", "seed") if key in section]
    if len(given) != 1:
        raise checker.fail(["observation"], "needs exactly one of 'y', 'x' or 'seed'")
    key = given[0]
    if key == "y":
        return {"y": checker.vector(section["y"], ["observation", "y"], size=out_dim)}
    if key == "x":
        return {"x": checker.vector(section["x"], ["observation", "x"], size=dim)}
    return {"seed": checker.integer(section, ["observation", "seed"], minimum=0)}


def _check_methods(checker: _Checker, data: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    section = checker.section(data, "methods", required=False)
    out = {}
    for name, settings in section.items():
        if name not in METHODS:
            raise checker.fail(["methods", name], f"unknown method; expected one of {', '.join(METHODS)}")
        if settings is None:
            settings = {}
        if not isinstance(settings, dict):
            raise checker.fail(["methods", name], "must be a mapping")
        out[name] = dict(settings)
    return out


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """Parse and validate an experiment file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None) from None

    checker = _Checker(_Locator(root), path.parent)
    if not isinstance(data, dict):
        raise checker.fail([], "top level must be a mapping")

    if "schema_version" not in data:
        raise checker.fail(["schema_version"], "missing schema version")
    if data["schema_version"] != SCHEMA_VERSION:
        raise checker.fail(["schema_version"], f"unsupported schema version {data['schema_version']!r}; expected {SCHEMA_VERSION}")

    name = data.get("name", path.stem)
    if not isinstance(name, str) or not name:
        raise checker.fail(["name"], "must be a non-empty string")

    schedule = _check_schedule(checker, data)
    prior = _check_prior(checker, data)
    dim = len(prior["means"][0])
    denoiser = _check_denoiser(checker, data)
    operator = _check_operator(checker, data, dim)
    out_dim = build_operator(operator, dim).out_dim
    observation = _check_observation(checker, data, dim, out_dim)

    method = checker.choice(data, ["method"], METHODS, default=VIPAINT)
    methods = _check_methods(checker, data)

    try:
        seeds = parse_seeds(data.get("seeds", [0]))
    except ValueError as exc:
        raise checker.fail(["seeds"], str(exc)) from None
    if any(s < 0 for s in seeds):
        raise checker.fail(["seeds"], "seeds must be nonnegative")

    n_samples = checker.integer(data, ["n_samples"], 20)
    oracle_n = checker.integer(data, ["oracle_samples"], 1000)
    data_range = None
    if data.get("data_range") is not None:
        data_range = float(checker.number(data, ["data_range"], positive=True))
    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise checker.fail(["output_dir"], "must be a path string")

    config = ExperimentConfig(
        name=name,
        schedule=schedule,
        prior=prior,
        denoiser=denoiser,
        operator=operator,
        observation=observation,
        method=method,
        methods=methods,
        seeds=seeds,
        n_samples=n_samples,
        output_dir=output_dir,
        data_range=data_range,
        oracle_samples=oracle_n,
        schema_version=SCHEMA_VERSION,
        source=str(path),
    )
    config.problem_hash = problem_hash(config)
    logger.info("Loaded experiment '%s' from %s (problem %s)", name, path, config.problem_hash[:12])
    return config


def problem_hash(config: ExperimentConfig) -> str:
    """sha256 over the problem sections; referenced files enter by content digest."""
    denoiser = dict(config.denoiser)
    if "weights" in denoiser:
        denoiser["weights"] = file_digest(denoiser["weights"])
    operator = dict(config.operator)
    if "mask_file" in operator:
        operator["mask_file"] = file_digest(operator["mask_file"])
    payload = {
        "schema_version": config.schema_version,
        "schedule": config.schedule,
        "prior": config.prior,
        "denoiser": denoiser,
        "operator": operator,
        "observation": config.observation,
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# --- builders ---


def build_schedule(section: Dict[str, Any]) -> NoiseSchedule:
    if section["kind"] == "VE":
        return NoiseSchedule.ve(section["sigma_min"], section["sigma_max"], section.get("T", 1.0))
    return NoiseSchedule.vp(section["var_min"], section["var_max"], section.get("T", 1.0))


def build_prior(section: Dict[str, Any]) -> GmmPrior:
    return GmmPrior(
        weights=np.asarray(section["weights"], dtype=float),
        means=np.asarray(section["means"], dtype=float),
        covs=np.asarray(section["covs"], dtype=float),
    )


def build_operator(section: Dict[str, Any], dim: int) -> MeasurementOp:
    common = {
        "obs_model": ObsModel(section.get("obs_model", "gaussian")),
        "laplace_scale": section.get("laplace_scale"),
    }
    if section.get("image_shape") is not None:
        common["image_shape"] = tuple(section["image_shape"])
    kind = section["kind"]
    if kind == "mask":
        mask = section["mask"] if "mask" in section else load_mask(section["mask_file"], dim)
        return MeasurementOp.masking(np.asarray(mask, dtype=bool), section["sigma_v"], **common)
    if kind == "blur":
        return MeasurementOp.blur(dim, section["size"], section["std"], section["sigma_v"], **common)
    return MeasurementOp.downsample(dim, section["factor"], section["sigma_v"], **common)


def build_method_config(method: str, schedule: NoiseSchedule, settings: Dict[str, Any]) -> Union[VipaintConfig, BaselineConfig]:
    """VipaintConfig or BaselineConfig from one `methods.<name>` section."""
    settings = dict(settings)
    try:
        if method == VIPAINT:
            preset = settings.pop("preset", "vipaint-2")
            gamma_preset = settings.pop("gamma_preset", None)
            for key in ("times", "lr_decay", "snr_window", "init_scales"):
                if key in settings and settings[key] is not None:
                    settings[key] = tuple(settings[key])
            config = VipaintConfig.preset(preset, schedule, gamma_preset, **settings)
            config.validate(schedule)
            return config
        settings.pop("n_samples", None)
        return BaselineConfig.defaults(method, schedule, **settings)
    except TypeError as exc:
        raise ConfigError(f"unknown setting: {exc}", field=f"methods.{method}") from None
    except DomainError as exc:
        raise ConfigError(str(exc), field=f"methods.{method}") from None
