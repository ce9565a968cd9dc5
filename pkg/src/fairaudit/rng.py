"""Deterministic seed derivation and stable hashing.

Every stochastic component in the toolkit draws from a stream whose seed is
derived from a single master seed with a SplitMix64-style 64-bit finalizer.
Derived streams are a pure function of (master seed, indices), so results do
not depend on thread count or evaluation order.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer: bijective 64-bit avalanche mix."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Derive a 64-bit stream seed from a master seed and index path."""
    x = master & MASK64
    for k in indices:
        x = mix64((x + (int(k) + 1) * GOLDEN) & MASK64)
    return x


def generator(master: int, *indices: int) -> np.random.Generator:
    """A numpy Generator on the derived stream (PCG64, platform-stable)."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, *indices)))


def hash64(text: str, salt: int = 0) -> int:
    """Stable 64-bit hash of a string (process- and platform-independent)."""
    digest = hashlib.blake2b(
        text.encode("utf-8"), digest_size=8, key=salt.to_bytes(8, "little")
    ).digest()
    return int.from_bytes(digest, "little")
