"""SplitMix64 random streams.

Every stochastic decision in the package (splits, bootstraps, GOSS, dropout,
initialisation, search draws) is taken from a :class:`Stream`.  The generator
is counter based: the ``i``-th output of a stream with state ``s`` is
``mix(s + (i + 1) * GOLDEN)``, so blocks of draws vectorise and the numba
kernels can reproduce the exact sequence from the same integer state.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for the substream identified by ``keys`` (e.g. a tree index)."""
    s = int(seed) & MASK64
    for k in keys:
        s = mix64(s ^ mix64((int(k) + GOLDEN) & MASK64))
    return s


class Stream:
    """A SplitMix64 stream; ``state`` advances by ``GOLDEN`` per draw."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    @classmethod
    def derived(cls, seed: int, *keys: int) -> "Stream":
        return cls(derive_seed(seed, *keys))

    def spawn(self, *keys: int) -> "Stream":
        return Stream(derive_seed(self.state, *keys))

    def next_u64(self, k: int) -> np.ndarray:
        if k <= 0:
            return np.empty(0, dtype=np.uint64)
        steps = np.arange(1, k + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            out = _mix64_array(z)
        self.state = (self.state + k * GOLDEN) & MASK64
        return out

    def uniform(self, k: int | None = None):
        """Uniform draws on [0, 1) with 53 random bits each."""
        if k is None:
            return float(self.uniform(1)[0])
        return (self.next_u64(k) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def randbelow(self, n: int, k: int | None = None):
        """Integers in [0, n) as floor(u * n)."""
        if k is None:
            return min(int(self.uniform() * n), n - 1)
        u = self.uniform(k)
        return np.minimum((u * n).astype(np.int64), n - 1)

    def normal(self, k: int) -> np.ndarray:
        """Standard normals by Box-Muller, consuming two uniforms per value."""
        u = self.uniform(2 * k)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation: stable argsort of ``n`` fresh 64-bit keys."""
        return np.argsort(self.next_u64(n), kind="stable").astype(np.int64)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in draw order."""
        return self.permutation(n)[:k]
