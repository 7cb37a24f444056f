"""Deterministic seed derivation.

All randomness in the package flows from a single root seed. Components ask
for a child generator by (label, index); the same request always yields the
same stream, independent of call order, thread scheduling, or platform.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label: str) -> int:
    # crc32 is stable across platforms and Python versions, unlike hash()
    return zlib.crc32(label.encode("utf-8"))


def child_seed(root_seed: int, label: str, index: int = 0) -> np.random.SeedSequence:
    """Derive a named child SeedSequence from a root seed."""
    if root_seed < 0:
        raise ValueError("root seed must be non-negative")
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=(_label_key(label), int(index)))


def child_rng(root_seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Derive a named child Generator from a root seed."""
    return np.random.default_rng(child_seed(root_seed, label, index))
