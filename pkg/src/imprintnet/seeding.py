"""Deterministic seed derivation: every sampling stage gets its own stream.

A master seed plus a path of string keys maps to an independent generator,
so reordering or skipping stages never shifts the randomness of another.
"""

from __future__ import annotations

import zlib

import numpy as np


def seed_sequence(master: int, *keys: str) -> np.random.SeedSequence:
    if master < 0:
        raise ValueError("master seed must be non-negative")
    entropy = [int(master)] + [zlib.crc32(str(k).encode("utf-8")) for k in keys]
    return np.random.SeedSequence(entropy)


def derive_rng(master: int, *keys: str) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, *keys))


def derive_seed(master: int, *keys: str) -> int:
    """A plain integer seed for interfaces that take one."""
    return int(seed_sequence(master, *keys).generate_state(1)[0])
