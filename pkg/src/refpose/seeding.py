"""Deterministic RNG derivation.

All randomized components accept a base seed and derive independent
streams from stable integer keys (sample index, trial index, CRC of an
image name), so results do not depend on scheduling or iteration order.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(base_seed: int, *keys: int) -> int:
    """Stable 63-bit seed for (base_seed, keys)."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def derive_rng(base_seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def name_key(name: str) -> int:
    """Stable integer key for a string (e.g. an image name)."""
    return zlib.crc32(name.encode("utf-8"))
