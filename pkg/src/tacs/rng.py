"""Counter-based random streams.

Every random number used by the package is a pure function of
``(master_seed, stream_index, draw_index)``.  Streams are built from the
SplitMix64 finalizer (Steele, Lea & Flood 2014, "Fast splittable
pseudorandom number generators"), which has full 64-bit avalanche:

    mix64(key, counter) = fmix(key + (counter + 1) * 0x9E3779B97F4A7C15)
    fmix(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
             z ^= z >> 27; z *= 0x94D049BB133111EB
             z ^= z >> 31

A shot with index ``s`` owns the stream keyed by
``child_seed = mix64(master_seed, s)``; its ``k``-th uniform is
``(mix64(child_seed, k) >> 11) * 2**-53``.  Because nothing is carried
between shots, the output does not depend on execution order or on how
work is split across workers.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _fmix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def mix64(key, counter) -> np.ndarray:
    """Mix a 64-bit key with a counter; broadcasts over array inputs."""
    key = np.asarray(key, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _fmix(key + (counter + np.uint64(1)) * GOLDEN)


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def child_seeds(master_seed: int, indices) -> np.ndarray:
    """``mix64(master_seed, i)`` for each stream index ``i``."""
    return mix64(np.uint64(check_seed(master_seed)), np.asarray(indices, dtype=np.uint64))


def uniforms(seeds: np.ndarray, num_draws: int) -> np.ndarray:
    """Uniform draws in [0, 1): row ``i`` is the first ``num_draws`` values of stream ``seeds[i]``."""
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1, 1)
    draws = np.arange(num_draws, dtype=np.uint64).reshape(1, -1)
    bits = mix64(seeds, draws) >> np.uint64(11)
    return bits.astype(np.float64) * (2.0**-53)


def derive_seed(master_seed: int, *labels) -> int:
    """Deterministic sub-seed for a labelled task (grid point, chain, ...).

    Labels may be ints or strings; strings are folded in byte by byte.
    """
    key = np.uint64(check_seed(master_seed))
    for label in labels:
        if isinstance(label, str):
            for byte in label.encode():
                key = mix64(key, byte)
            key = mix64(key, 0xFFFF)
        else:
            key = mix64(key, int(label) & _MASK64)
    return int(key)
