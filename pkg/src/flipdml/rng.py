"""Seed derivation and counter-based random streams.

Every random quantity in the package comes from a stream addressed by an
integer seed plus a tuple of integer keys, so results never depend on the
order in which work items run or on how many workers run them.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit child seed for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator keyed by the derived seed of ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *keys)))


def replication_normals(seed: int, n_reps: int, size: int) -> np.ndarray:
    """``(n_reps, size)`` standard normals; row ``m`` uses its own substream.

    The Philox key is fixed by ``seed`` and replication ``m`` starts at
    counter ``m << 128``, so any row can be regenerated on its own.
    """
    key = derive_seed(seed, 0x5EED)
    out = np.empty((n_reps, size))
    for m in range(n_reps):
        bitgen = np.random.Philox(key=key, counter=[0, 0, m, 0])
        out[m] = np.random.Generator(bitgen).standard_normal(size)
    return out
