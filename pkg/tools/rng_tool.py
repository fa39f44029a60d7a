# Named random substreams
"""
tools.rng_tool

Every random draw in a run derives from the config seed through a named
substream ("init", "mc-chain", "phase2", "baseline", ...). Substreams are
keyed by a stable hash of the name plus integer indices, so the same
(seed, name, indices) always yields the same generator regardless of what
else was drawn before.
"""

import zlib
from typing import List, Sequence

import numpy as np


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return a fresh generator for (seed, name, *indices)."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(i) & 0xFFFFFFFF for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def chain_streams(seed: int, name: str, step: int, n_chains: int) -> List[np.random.Generator]:
    """One generator per Monte-Carlo chain: (seed, name, step, m)."""
    return [substream(seed, name, step, m) for m in range(n_chains)]


def draw_normals(streams: Sequence[np.random.Generator], shape: tuple) -> np.ndarray:
    """Stack one standard-normal draw of `shape` from each stream."""
    if not streams:
        return np.zeros((0,) + tuple(shape))
    return np.stack([g.standard_normal(shape) for g in streams])
