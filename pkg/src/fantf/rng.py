"""Deterministic random streams.

The generator is SplitMix64: the state is a 64-bit counter advanced by the
golden-ratio increment, and each output is the counter passed through the
SplitMix64 finalizer. Because output ``i`` depends only on ``state + i*gamma``
a block of variates can be produced with vectorized uint64 arithmetic while
staying identical to the sequential definition.

Uniform doubles take the top 53 bits of each output. Normal variates use the
Box-Muller transform on consecutive output pairs; the second variate of a pair
is kept in ``gaussian_cache`` when an odd count is requested.
"""
from __future__ import annotations

import math

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *tags) -> int:
    """Derive an independent 64-bit seed from ``seed`` and a sequence of tags.

    Integer tags are XOR-ed in (``seed ^ epoch`` style); string tags are folded
    in via their UTF-8 bytes. Every step is passed through the finalizer.
    """
    z = _mix_int(int(seed) & _MASK64)
    for tag in tags:
        if isinstance(tag, str):
            for byte in tag.encode("utf-8"):
                z = _mix_int(z ^ byte)
        else:
            z = _mix_int(z ^ (int(tag) & _MASK64))
    return z


class RngState:
    """A SplitMix64 stream. Identical seeds yield bit-identical streams."""

    algorithm = "splitmix64/box-muller"

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        self.state = self.seed
        self.gaussian_cache: float | None = None

    def __repr__(self):
        return f"RngState(seed={self.seed}, state={self.state})"

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(_GAMMA)) & _MASK64
        return out

    def random(self, shape=()) -> np.ndarray:
        """Uniform doubles in [0, 1)."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape)

    def uniform(self, shape=(), low=0.0, high=1.0) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def standard_normal(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        out = np.empty(n, dtype=np.float64)
        filled = 0
        if n and self.gaussian_cache is not None:
            out[0] = self.gaussian_cache
            self.gaussian_cache = None
            filled = 1
        remaining = n - filled
        if remaining:
            pairs = (remaining + 1) // 2
            bits = self.next_u64(2 * pairs) >> np.uint64(11)
            # u1 in (0, 1] keeps the logarithm finite
            u1 = (bits[0::2].astype(np.float64) + 1.0) * _INV_2_53
            u2 = bits[1::2].astype(np.float64) * _INV_2_53
            radius = np.sqrt(-2.0 * np.log(u1))
            angle = 2.0 * math.pi * u2
            z = np.empty(2 * pairs, dtype=np.float64)
            z[0::2] = radius * np.cos(angle)
            z[1::2] = radius * np.sin(angle)
            out[filled:] = z[:remaining]
            if 2 * pairs > remaining:
                self.gaussian_cache = float(z[-1])
        return out.reshape(shape)

    def normal(self, shape=(), mean=0.0, std=1.0) -> np.ndarray:
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        z = self.standard_normal(shape)
        if std == 0:
            return np.full(np.shape(z), float(mean))
        return mean + std * z

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)`` driven by this stream."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.random(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers uniform on [low, high) (floor of a scaled uniform)."""
        span = high - low
        return low + np.minimum((self.random(shape) * span).astype(np.int64), span - 1)

    def split(self, n: int) -> list["RngState"]:
        """Child streams seeded from the next ``n`` outputs.

        The parent advances by exactly ``n`` outputs no matter how much the
        children are later used.
        """
        return [RngState(int(s)) for s in self.next_u64(n)]


def sample_gaussian(rng: RngState, shape, mean=0.0, std=1.0):
    """Tensor of i.i.d. normal variates drawn from ``rng``."""
    from .tensor import Tensor

    return Tensor(rng.normal(tuple(shape), mean, std))
