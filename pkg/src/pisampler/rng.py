"""Seeded, counter-based random substreams.

Every stochastic routine derives its randomness from one top-level integer
seed and a tuple of stream names.  Trajectory noise uses a Philox generator
keyed by ``(stream key, trajectory index)`` so that a trajectory's noise does
not depend on how a batch is split between workers.
"""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _name_to_int(name):
    if isinstance(name, (int, np.integer)):
        return int(name) & _MASK64
    digest = hashlib.blake2b(str(name).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream_key(seed, *names):
    """64-bit key of the substream ``names`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64,
                                spawn_key=tuple(_name_to_int(n) for n in names))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator(seed, *names):
    """A numpy Generator for the named substream."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *names)))


def trajectory_generator(key, index):
    """Generator for trajectory ``index`` of the stream ``key``."""
    k = np.array([key & _MASK64, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=k))


def trajectory_normals(key, start, count, n_steps, dim):
    """Standard normals of shape (count, n_steps, dim) for trajectories
    ``start .. start + count - 1``."""
    out = np.empty((count, n_steps, dim))
    for i in range(count):
        out[i] = trajectory_generator(key, start + i).standard_normal((n_steps, dim))
    return out
