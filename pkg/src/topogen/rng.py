"""Deterministic RNG splitting.

Every command takes one root seed; module-level generators are derived from
(root seed, label) by hashing, so adding or reordering call sites does not
shift the streams handed to unrelated components.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, label: str) -> int:
    """Stable 64-bit child seed for a (root, label) pair."""
    h = hashlib.sha256(f"{root_seed}/{label}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def make_rng(root_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, label))
