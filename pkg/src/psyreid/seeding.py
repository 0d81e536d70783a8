"""Deterministic seed derivation for per-item random streams.

Every randomized stage derives an independent 64-bit stream seed from
(run seed, item key, level index) so results do not depend on iteration
order or thread count.
"""
from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a(data: str | bytes) -> int:
    """64-bit FNV-1a hash of a string (UTF-8) or byte sequence."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def mix64(*parts: int) -> int:
    """Combine integers into one 64-bit seed (splitmix64 finalizer per part)."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        z = (h + (p & _MASK64)) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        h = z ^ (z >> 31)
    return h


def rng_for(*parts: int | str) -> np.random.Generator:
    """Seeded generator keyed by an arbitrary mix of ints and strings."""
    ints = [fnv1a(p) if isinstance(p, str) else p for p in parts]
    return np.random.Generator(np.random.PCG64(mix64(*ints)))
