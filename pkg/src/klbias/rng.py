"""Counter-based random streams, one per particle, vectorized over particles.

Each particle owns a 64-bit key and a draw counter.  Draw ``c`` of stream ``k``
is the SplitMix64 output for state ``k + (c + 1) * GAMMA``, so a particle's
sequence depends only on its key and how many numbers it has consumed, never
on how the population is chunked or ordered.  Offspring created by resampling
receive keys derived from the parent key, the resampling generation and their
offspring index.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_TWO53 = float(2**53)


def mix64(x):
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    x = np.array(x, dtype=np.uint64, copy=True)
    with np.errstate(over="ignore"):
        x ^= x >> _S30
        x *= _M1
        x ^= x >> _S27
        x *= _M2
        x ^= x >> _S31
    return x


def derive_key(*parts) -> np.uint64:
    """Hash a sequence of non-negative integers into one 64-bit key."""
    h = np.array([0x243F6A8885A308D3], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for p in parts:
            h = mix64(h ^ mix64(np.array([int(p) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)) + _GAMMA)
    return h[0]


def _bits(keys, counters):
    with np.errstate(over="ignore"):
        return mix64(keys + (counters + np.uint64(1)) * _GAMMA)


def _to_unit_open(bits):
    # (0, 1]: never zero so log() is safe
    return ((bits >> _S11).astype(np.float64) + 1.0) / _TWO53


class ParticleStreams:
    """Independent random streams for ``n`` particles.

    Parameters
    ----------
    keys : uint64 array of shape (n,)
    counters : uint64 array of shape (n,), optional
    """

    def __init__(self, keys, counters=None):
        self.keys = np.asarray(keys, dtype=np.uint64).copy()
        if counters is None:
            counters = np.zeros_like(self.keys)
        self.counters = np.asarray(counters, dtype=np.uint64).copy()

    @classmethod
    def from_seed(cls, seed, n):
        root = derive_key(seed, 0x5EED)
        keys = mix64(np.full(n, root, dtype=np.uint64) ^ mix64(np.arange(n, dtype=np.uint64)))
        return cls(keys)

    def __len__(self):
        return self.keys.shape[0]

    def copy(self):
        return ParticleStreams(self.keys, self.counters)

    def take(self, idx):
        return ParticleStreams(self.keys[idx], self.counters[idx])

    def uniform(self, size=1):
        """Per-particle uniforms in (0, 1], shape (n, size)."""
        offs = np.arange(size, dtype=np.uint64)
        bits = _bits(self.keys[:, None], self.counters[:, None] + offs[None, :])
        self.counters += np.uint64(size)
        return _to_unit_open(bits)

    def normal(self, size=1):
        """Per-particle standard normals (Box-Muller), shape (n, size)."""
        m = (size + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log(u[:, :m]))
        ang = 2.0 * np.pi * u[:, m:]
        out = np.concatenate([r * np.cos(ang), r * np.sin(ang)], axis=1)
        return out[:, :size]

    def spawn(self, parents, generation):
        """Streams for offspring ``k`` of parent ``parents[k]`` at a resampling generation."""
        parents = np.asarray(parents)
        child = np.arange(parents.shape[0], dtype=np.uint64)
        with np.errstate(over="ignore"):
            salt = mix64(child + np.uint64(generation) * _M1)
        keys = mix64(self.keys[parents] ^ salt)
        return ParticleStreams(keys)


def coordinator_uniform(seed, tag, index) -> float:
    """A population-level uniform in (0, 1] keyed by (seed, tag, index)."""
    key = derive_key(seed, tag, index)
    return float(_to_unit_open(_bits(np.array([key]), np.zeros(1, dtype=np.uint64)))[0])
