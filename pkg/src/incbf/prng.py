"""SplitMix64 generator: tiny, seedable and identical on every platform."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int = 0):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.array([self.uniform() for _ in range(n)]).reshape(shape)

    def symmetric(self, amplitude: float) -> float:
        """Uniform draw in [-amplitude, amplitude)."""
        return amplitude * (2.0 * self.uniform() - 1.0)
