"""Deterministic random-stream derivation.

Every random draw in a run descends from one root seed. Subsystems get
independent streams keyed by a name (and optional integer indices, e.g. an
episode number), so adding a consumer never perturbs the others.
"""
from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    """Stable 32-bit key for a stream name (crc32 is platform-independent)."""
    return zlib.crc32(name.encode("utf8"))


def child_rng(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for stream `name` (plus indices) under the root `seed`."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, stream_key(name)]
    entropy.extend(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def child_seed(seed: int, name: str, *indices: int) -> int:
    """64-bit derived seed, for components that take a plain integer."""
    return int(child_rng(seed, name, *indices).integers(0, 2**63 - 1))
