"""Splittable RNG streams derived from one root seed.

Every stage asks for ``stage_rng(root_seed, "stage", ...)``. The path elements
(strings hashed with CRC-32, integers used as-is) become the ``spawn_key`` of
a ``numpy.random.SeedSequence``, so streams are independent of each other and
of call order: re-running any single stage with the same root seed and path
reproduces its draws exactly.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def stage_seed(root_seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root_seed), spawn_key=tuple(_key(p) for p in path))


def stage_rng(root_seed: int, *path) -> np.random.Generator:
    return np.random.default_rng(stage_seed(root_seed, *path))
