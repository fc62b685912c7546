"""Seeded pseudo-random values with a fully specified algorithm.

All randomness in the package flows through the xoshiro256** generator
below, seeded through splitmix64. Pinning the algorithm (instead of
delegating to numpy's generators) keeps runs bit-identical across
platforms and library versions, and makes the draw sequence reproducible
from the seed alone.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once, returning (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive(seed: int, *tags: int) -> int:
    """Derive a substream seed from a base seed and integer tags.

    Mixing is order-sensitive: derive(s, a, b) != derive(s, b, a) in
    general. Used to give every hospital/increment/round its own
    independent stream so results do not depend on execution order.
    """
    state = seed & _MASK64
    for tag in tags:
        state ^= ((tag & _MASK64) * 0xD1B54A32D192ED03) & _MASK64
        state, out = splitmix64(state)
        state = out
    return state


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256:
    """xoshiro256** generator, state seeded via splitmix64."""

    __slots__ = ("_s0", "_s1", "_s2", "_s3", "_spare_normal")

    def __init__(self, seed: int):
        state = seed & _MASK64
        state, self._s0 = splitmix64(state)
        state, self._s1 = splitmix64(state)
        state, self._s2 = splitmix64(state)
        _, self._s3 = splitmix64(state)
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def next_double(self) -> float:
        """Uniform double in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        # Largest multiple of n representable in 64 bits; values at or
        # above it would bias the modulo.
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.next_double()

    def uniforms(self, n: int, low: float, high: float) -> np.ndarray:
        span = high - low
        return np.array(
            [low + span * self.next_double() for _ in range(n)], dtype=np.float64
        )

    def normal(self) -> float:
        """Standard normal via Box-Muller; the spare value is cached."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = 1.0 - self.next_double()  # in (0, 1], keeps log finite
        u2 = self.next_double()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return r * math.cos(theta)

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> np.ndarray:
        order = list(range(n))
        self.shuffle(order)
        return np.array(order, dtype=np.int64)
