# Save/load samples, weights, traces and summaries
"""
tools.storage_tool

Persistence for run artifacts.

Arrays (sample sets, MLP weights) use a framed binary layout:

    8 bytes   magic b"VIPAINT\\x00"
    4 bytes   header length n, little-endian uint32
    n bytes   UTF-8 JSON header (version, shape, dtype, problem hash, extras)
    rest      payload, little-endian float64, C order

JSON is written with sorted keys so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from core.errors import DomainError

logger = logging.getLogger(__name__)

MAGIC = b"VIPAINT\x00"
FORMAT_VERSION = 1
DTYPE = "<f8"

PathLike = Union[str, Path]


def _frame(header: Dict[str, Any], payload: bytes) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def _unframe(blob: bytes, path: PathLike) -> Tuple[Dict[str, Any], bytes]:
    if blob[: len(MAGIC)] != MAGIC:
        raise DomainError(f"{path} is not a framed array file")
    offset = len(MAGIC)
    (size,) = struct.unpack("<I", blob[offset : offset + 4])
    offset += 4
    header = json.loads(blob[offset : offset + size].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise DomainError(f"{path} has unsupported format version {header.get('version')}")
    return header, blob[offset + size :]


def save_array(path: PathLike, array: np.ndarray, problem_hash: str = "", **extra: Any) -> Path:
    """Write one float64 array with its header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.ascontiguousarray(array, dtype=DTYPE)
    header = {
        "version": FORMAT_VERSION,
        "kind": extra.pop("kind", "array"),
        "shape": list(array.shape),
        "dtype": DTYPE,
        "problem_hash": problem_hash,
        **extra,
    }
    path.write_bytes(_frame(header, array.tobytes()))
    logger.debug("Saved %s array %s to %s", header["kind"], array.shape, path)
    return path


def load_array(path: PathLike) -> Tuple[np.ndarray, Dict[str, Any]]:
    header, payload = _unframe(Path(path).read_bytes(), path)
    if header.get("dtype") != DTYPE:
        raise DomainError(f"{path} has dtype {header.get('dtype')}, expected {DTYPE}")
    array = np.frombuffer(payload, dtype=DTYPE).reshape(header["shape"]).astype(float)
    return array, header


def save_samples(path: PathLike, samples: np.ndarray, problem_hash: str, method: str, seed: int) -> Path:
    return save_array(path, samples, problem_hash, kind="samples", method=method, seed=seed)


def load_samples(path: PathLike) -> Tuple[np.ndarray, Dict[str, Any]]:
    return load_array(path)


def save_weights(path: PathLike, params: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Path:
    """MLP weights: parameter arrays concatenated in sorted-name order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(params)
    arrays = [np.ascontiguousarray(params[name], dtype=DTYPE) for name in names]
    header = {
        "version": FORMAT_VERSION,
        "kind": "mlp-weights",
        "dtype": DTYPE,
        "arrays": [[name, list(a.shape)] for name, a in zip(names, arrays)],
        "meta": meta,
    }
    path.write_bytes(_frame(header, b"".join(a.tobytes() for a in arrays)))
    logger.info("Saved MLP weights (%d arrays) to %s", len(names), path)
    return path


def load_weights(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    header, payload = _unframe(Path(path).read_bytes(), path)
    if header.get("kind") != "mlp-weights":
        raise DomainError(f"{path} does not hold MLP weights")
    flat = np.frombuffer(payload, dtype=DTYPE)
    params, offset = {}, 0
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) if shape else 1
        params[name] = flat[offset : offset + size].reshape(shape).astype(float)
        offset += size
    if offset != flat.size:
        raise DomainError(f"{path} payload has {flat.size} values, header describes {offset}")
    return params, header["meta"]


def save_trace(path: PathLike, trace: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_csv(path, index=False, float_format="%.17g")
    return path


def load_trace(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)


def save_json(path: PathLike, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug("Saved %s", path)
    return path


def load_json(path: PathLike) -> Optional[Any]:
    """
    Load a JSON file. Returns None if it is missing or not valid JSON.
    """
    path = Path(path)
    if not path.exists():
        logger.warning("File not found: %s", path)
        return None
    try:
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        logger.error("Failed to decode JSON at %s: %s", path, e)
        return None


def file_digest(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_mask(path: PathLike, dim: int) -> np.ndarray:
    """
    Boolean mask from a CSV/text file (0/1 values, any layout) or a raw
    binary file holding one byte per coordinate.
    """
    path = Path(path)
    if path.suffix.lower() in (".csv", ".txt"):
        values = pd.read_csv(path, header=None).to_numpy(dtype=float).ravel()
    else:
        values = np.fromfile(path, dtype=np.uint8).astype(float)
    if values.size != dim:
        raise DomainError(f"mask in {path} has {values.size} entries, expected {dim}")
    if not np.all((values == 0.0) | (values == 1.0)):
        raise DomainError(f"mask in {path} must contain only 0 and 1")
    return values.astype(bool)
