"""Seed derivation.

All randomness flows from one integer master seed. A component asks for a
generator by a path of labels, e.g. ``stream(seed, "design", 40, 7)`` for
replicate 7 at ladder point 40. Labels are hashed with CRC32 so the mapping
is stable across processes and Python versions (unlike ``hash``).
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(label: object) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if label < 0:
            raise ValueError("integer stream labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def seed_sequence(seed: int, *path: object) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))


def stream(seed: int, *path: object) -> np.random.Generator:
    """Independent generator for the named sub-stream of ``seed``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *path)))


def derive_seed(seed: int, *path: object) -> int:
    """A plain integer seed for the named sub-stream (for passing across processes)."""
    return int(seed_sequence(seed, *path).generate_state(1, np.uint64)[0] >> np.uint64(1))


def as_generator(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("a seed is required; unseeded draws are not reproducible")
    return stream(int(seed))
