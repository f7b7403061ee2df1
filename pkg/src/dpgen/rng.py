"""Portable, counter-based pseudo-random numbers.

Golden files and checkpoints are compared byte-for-byte, so every stochastic
step in the package draws from this generator instead of platform RNGs. The
stream is SplitMix64 addressed by counter: draw ``k`` of seed ``s`` is
``mix64(s + (k+1)*GAMMA)``, which makes block generation a pure vectorized
function of the counter range.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def _mix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _MIX1
        x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))


class PortableRng:
    """Deterministic SplitMix64 stream with vectorized block draws."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & _U64_MASK)
        self._pos = 0

    def child(self, tag: int) -> "PortableRng":
        """Independent stream derived from this seed and an integer tag."""
        tagged = _mix64(np.uint64((tag & _U64_MASK)) ^ self._seed ^ _GAMMA)
        return PortableRng(int(tagged))

    def uint64(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            counters = self._seed + np.arange(self._pos + 1, self._pos + n + 1, dtype=np.uint64) * _GAMMA
        self._pos += n
        return _mix64(counters)

    def random(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1), 53-bit resolution."""
        return (self.uint64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def normal(self, shape) -> np.ndarray:
        """Standard normal draws via Box-Muller on counter pairs."""
        size = int(np.prod(shape, dtype=np.int64)) if not isinstance(shape, int) else shape
        pairs = (size + 1) // 2
        # u1 shifted into (0, 1] so log() stays finite
        u1 = (self.uint64(pairs).astype(np.float64) * (2.0 ** -64)) + (2.0 ** -65)
        u2 = self.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:size]
        return z.reshape(shape) if not isinstance(shape, int) else z

    def integers(self, low: int, high: int, n: int = 1) -> np.ndarray:
        """n ints uniform on [low, high); modulo bias is negligible at 64 bits."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        span = np.uint64(high - low)
        return (self.uint64(n) % span).astype(np.int64) + low

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by sorting random keys."""
        keys = self.random(n)
        return np.argsort(keys, kind="stable")

    def choice(self, n: int) -> int:
        return int(self.integers(0, n, 1)[0])
