"""Seeded random streams.

Every consumer (weight init, shuffling, augmentation, phantom synthesis) gets
its own stream derived from the run seed with splitmix64, so that e.g. turning
augmentation off does not change the initial weights.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int | str) -> int:
    """Fold ``keys`` into ``seed``; strings are hashed with CRC32 (stable across runs)."""
    state = splitmix64(int(seed) & _MASK)
    for k in keys:
        if isinstance(k, str):
            k = zlib.crc32(k.encode("utf-8"))
        state = splitmix64(state ^ (int(k) & _MASK))
    return state


def stream(seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))
