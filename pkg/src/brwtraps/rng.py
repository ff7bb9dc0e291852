"""Counter-based hashing and seed derivation.

Every random decision in the Monte Carlo engine is a pure function of a key
and a counter, so results do not depend on how replicas are batched or
scheduled.  The mixer is the SplitMix64 finalizer, which is a bijection on
64-bit integers.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_REPLICA_DOMAIN = 0x5EED5EED5EED5EED
_STEP_GAMMA = 0xD1B54A32D192ED03


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a Python int (bijective on [0, 2**64))."""
    x &= MASK64
    x ^= x >> 30
    x = (x * _M1) & MASK64
    x ^= x >> 27
    x = (x * _M2) & MASK64
    x ^= x >> 31
    return x


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`mix64`; uint64 arithmetic wraps modulo 2**64."""
    x = np.asarray(x, dtype=np.uint64).copy()
    x ^= x >> np.uint64(30)
    x *= np.uint64(_M1)
    x ^= x >> np.uint64(27)
    x *= np.uint64(_M2)
    x ^= x >> np.uint64(31)
    return x


def derive_replica_seed(master_seed: int, replica_index: int) -> int:
    """Seed for replica ``replica_index`` under ``master_seed``.

    ``seed = mix64(mix64(master ^ D) + index)``.  For a fixed master seed the
    map is injective in the index (a bijection composed with a translation),
    so distinct indices below 2**64 never collide.
    """
    if replica_index < 0:
        raise ValueError("replica_index must be non-negative")
    key = mix64((master_seed & MASK64) ^ _REPLICA_DOMAIN)
    return mix64(key + replica_index)


def step_keys(replica_seeds: np.ndarray, step: int) -> np.ndarray:
    """Per-replica key for one time step."""
    seeds = np.asarray(replica_seeds, dtype=np.uint64)
    return mix64_array(seeds + np.uint64((step * _STEP_GAMMA) & MASK64))


def particle_hash(keys: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Hash of (step key, particle index) -> uniform 64-bit word."""
    idx = np.asarray(index, dtype=np.uint64)
    return mix64_array(np.asarray(keys, dtype=np.uint64) + (idx + np.uint64(1)) * np.uint64(GOLDEN_GAMMA))


def bounded(words: np.ndarray, m: int) -> np.ndarray:
    """Map uniform 64-bit words to {0, ..., m-1} by multiply-shift on the top 32 bits."""
    hi = np.asarray(words, dtype=np.uint64) >> np.uint64(32)
    return ((hi * np.uint64(m)) >> np.uint64(32)).astype(np.int64)


def generator(seed: int) -> np.random.Generator:
    """A numpy Generator backed by Philox keyed with ``seed``."""
    return np.random.Generator(np.random.Philox(key=seed & MASK64))
