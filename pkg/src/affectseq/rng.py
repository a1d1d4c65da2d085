"""Seed derivation for reproducible runs.

All randomness in this package flows from one integer seed. Purpose strings
("init", "shuffle-epoch-3", "noise-audio-m001", ...) are folded into
independent child seeds with SplitMix64, a 64-bit-state generator with a
strong avalanche finalizer. Derivation is stateless: the child seed depends
only on (seed, purpose), so adding a new consumer never shifts the streams
of existing ones. Bulk sampling then uses numpy's PCG64 seeded with the
derived value.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(z: int) -> int:
    """SplitMix64 output scrambler (Steele, Lea, Flood 2014)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(seed: int, purpose: str) -> int:
    """Child seed for a named purpose; independent of derivation order."""
    return _mix64(_mix64((seed + _GOLDEN) & _MASK64) ^ _fnv1a(purpose))


def generator(seed: int, purpose: str) -> np.random.Generator:
    """PCG64 generator keyed by (seed, purpose)."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, purpose)))
