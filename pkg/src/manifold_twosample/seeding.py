"""Portable seed derivation.

Every stochastic path (trials, bootstrap replicates, samplers, critic
initialisation) draws from ``numpy.random.Generator(PCG64(seed))`` where the
seed is obtained from a parent seed and an integer index by :func:`derive_seed`.

``derive_seed(parent, index)`` is the SplitMix64 finaliser applied to
``parent + (index + 1) * 0x9E3779B97F4A7C15 (mod 2**64)``.  Because the golden
gamma is odd and the finaliser is a bijection on 64-bit words, distinct
indices below ``2**64`` always give distinct child seeds for a fixed parent.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(parent: int, index: int) -> int:
    """Child seed for stream ``index`` of ``parent`` (both taken mod 2**64)."""
    return splitmix64((parent & MASK64) + ((index + 1) * GOLDEN_GAMMA & MASK64))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & MASK64))
