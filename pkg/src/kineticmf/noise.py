"""Counter-based Gaussian streams on top of Philox.

Every random draw in the package is addressed by (master seed, domain, path),
where the domain is a fixed string ("particle-noise", "init", ...) and the path
is a tuple of integers (step index, sweep cell, ...).  Streams are therefore
independent of execution order, worker count, and restart point: regenerating
the same address yields bit-identical values, which is what makes synchronous
coupling and exact restarts trivial.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

Array = np.ndarray

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def domain_tag(name: str) -> int:
    """Stable 64-bit tag for a stream domain name (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def derive_key(master_seed: int, domain: str, *path: int) -> Array:
    """Fold (seed, domain, path...) into a 128-bit Philox key.

    Distinct addresses give overwhelmingly distinct keys, hence independent
    counter-based blocks.
    """
    h = _splitmix64(int(master_seed) & _MASK64)
    h = _splitmix64(h ^ domain_tag(domain))
    for p in path:
        h = _splitmix64(h ^ (int(p) & _MASK64))
    lo = _splitmix64(h ^ 0xA5A5A5A5A5A5A5A5)
    return np.array([h, lo], dtype=np.uint64)


def stream(master_seed: int, domain: str, *path: int) -> Generator:
    """A fresh Generator for the given address."""
    return Generator(Philox(key=derive_key(master_seed, domain, *path)))


def child_seed(master_seed: int, domain: str, *path: int) -> int:
    """A derived 63-bit seed for an independent sub-run (sweep cell, repetition)."""
    return int(derive_key(master_seed, domain, *path)[0] >> 1)


@dataclass(frozen=True)
class NoiseDriver:
    """Per-step Wiener increments for an ensemble of particle streams.

    The driver owns ``n_streams`` logical streams, one per particle, each
    emitting ``modes`` standard normals per step.  The value for
    (stream i, mode k, step n) is a pure function of
    (master_seed, i, k, n, n_streams), so two ensembles built with the same
    seed and shape consume identical increments -- synchronous coupling needs
    no shared mutable state.  ``stream_ids`` re-routes slots to streams, which
    is how a particle-index permutation permutes the noise with it.
    """

    master_seed: int
    n_streams: int
    modes: int
    stream_ids: tuple = None  # optional slot -> stream routing

    def __post_init__(self):
        if self.n_streams < 1 or self.modes < 1:
            raise ValueError("n_streams and modes must be >= 1")
        if self.stream_ids is not None:
            ids = tuple(int(i) for i in self.stream_ids)
            if sorted(ids) != list(range(self.n_streams)):
                raise ValueError("stream_ids must be a permutation of range(n_streams)")
            object.__setattr__(self, "stream_ids", ids)

    def normals(self, step: int) -> Array:
        """Standard-normal increments for one step, shape (n_streams, modes)."""
        g = stream(self.master_seed, "particle-noise", step)
        raw = g.standard_normal((self.n_streams, self.modes))
        if self.stream_ids is None:
            return raw
        return raw[np.asarray(self.stream_ids)]

    def permuted(self, perm) -> "NoiseDriver":
        """A driver whose slot i consumes stream perm[i]."""
        base = self.stream_ids if self.stream_ids is not None else tuple(range(self.n_streams))
        ids = tuple(base[int(p)] for p in perm)
        return NoiseDriver(self.master_seed, self.n_streams, self.modes, ids)
