"""Stable seed derivation.

Per-item seeds are the first 8 bytes (big-endian) of the BLAKE2b digest of
``"<global_seed>\\x1f<part>\\x1f..."``; they key numpy's Philox4x64 counter-based
generator, whose output stream is fixed by its published algorithm rather than
by platform or library build.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(global_seed: int, *parts) -> int:
    """64-bit seed that depends only on ``global_seed`` and ``parts``."""
    text = "\x1f".join([str(int(global_seed)), *map(str, parts)])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def make_rng(global_seed: int, *parts) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(global_seed, *parts)))


def unit_hash(global_seed: int, *parts) -> float:
    """Deterministic value in [0, 1) derived from the seed and parts."""
    return derive_seed(global_seed, *parts) / 2.0**64
