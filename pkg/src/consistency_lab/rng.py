"""Seeded random streams.

Every stochastic routine takes an explicit ``numpy.random.Generator``.  Streams
for independent pieces of work are derived with :class:`numpy.random.SeedSequence`
spawn keys, so a (seed, key...) tuple always maps to the same stream regardless of
the order or process in which the work runs.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    # strings hash via crc32 so keys are stable across interpreter runs
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Return a PCG64 generator for the stream ``(seed, *keys)``."""
    spawn_key = tuple(_key_to_int(k) for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("an explicit rng (Generator or int seed) is required")
    return make_rng(int(rng))
