"""Seedable, portable pseudo-randomness (PCG32, XSH-RR variant).

Every stochastic choice in the package flows through :class:`Pcg32` so that
a (seed, stream) pair fully determines corpora, initial weights, shuffles
and probe splits, bit for bit, on every platform.
"""

from __future__ import annotations

import math

_MASK64 = 0xFFFFFFFFFFFFFFFF
_MASK32 = 0xFFFFFFFF
_MULTIPLIER = 6364136223846793005


class Pcg32:
    """PCG32 generator: 64-bit LCG state, 32-bit xorshift-rotate output.

    ``stream`` selects one of 2**63 independent sequences; the derived
    increment is always odd. A generator must not be shared between
    concurrent tasks.
    """

    __slots__ = ("state", "inc", "_gauss_spare")

    def __init__(self, seed: int, stream: int = 0):
        self.state = 0
        self.inc = ((stream << 1) | 1) & _MASK64
        self._gauss_spare = None
        self.next_u32()
        self.state = (self.state + (seed & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _MULTIPLIER + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform draw in [lo, hi) from one 32-bit step."""
        return lo + (hi - lo) * (self.next_u32() / 4294967296.0)

    def gauss(self) -> float:
        """Standard normal via Box-Muller; the sine variate is cached."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return z
        # (next_u32 + 1) / 2**32 lies in (0, 1], keeping log() finite.
        u1 = (self.next_u32() + 1) / 4294967296.0
        u2 = (self.next_u32() + 1) / 4294967296.0
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._gauss_spare = r * math.sin(theta)
        return r * math.cos(theta)

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection sampling."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        threshold = (1 << 32) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def getstate(self) -> tuple:
        return (self.state, self.inc, self._gauss_spare)

    def setstate(self, state: tuple) -> None:
        self.state, self.inc, self._gauss_spare = state

    @classmethod
    def from_state(cls, state: tuple) -> "Pcg32":
        rng = cls.__new__(cls)
        rng.setstate(state)
        return rng
