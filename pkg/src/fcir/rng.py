"""Seed derivation and Gaussian streams.

Every random draw in the package goes through this module so that a
``(seed, ...)`` tuple maps to the same numbers on every platform.

* Seed mixing uses SplitMix64 (Steele, Lea & Flood 2014). Child seeds are
  derived by folding keys into the state, ``h <- splitmix64(h ^ key)``.
* The Gaussian stream of a seed is numpy's PCG64 bit generator seeded with
  that 64-bit integer (through ``SeedSequence``), and normals come from
  ``Generator.standard_normal`` (the ziggurat method).
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (64-bit unsigned arithmetic)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Mix a master seed with integer keys into an independent 64-bit seed.

    ``derive_seed(master, i)`` is the per-path seed of path ``i`` in an
    ensemble; it depends only on its arguments, never on call order.
    """
    h = splitmix64(int(master) & MASK64)
    for key in keys:
        h = splitmix64(h ^ (int(key) & MASK64))
    return h


def gaussian_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


def standard_normals(seed: int, size: int) -> np.ndarray:
    return gaussian_stream(seed).standard_normal(size)
