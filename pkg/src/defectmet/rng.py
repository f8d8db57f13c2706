"""SplitMix64: the pinned generator behind every seeded operation.

SplitMix64 is a counter-based generator: the state advances by the fixed odd
increment ``GOLDEN_GAMMA`` and each output is a bijective mix of the counter.
Constants are those of Steele, Lea & Flood (2014) as used in ``java.util``::

    state  += 0x9E3779B97F4A7C15
    z       = state
    z       = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z       = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output  = z ^ (z >> 31)

All arithmetic is modulo 2**64.  Pure Python integers keep the stream
identical on every platform and in any other language that follows the same
recipe, which is the point: split manifests must be reproducible byte for byte.
"""

from __future__ import annotations

import math
from typing import MutableSequence, Sequence, TypeVar

T = TypeVar("T")

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Hash ``seed`` together with integer ``keys`` into a child seed."""
    s = seed & MASK64
    for k in keys:
        s = mix64((s + GOLDEN_GAMMA * ((k & MASK64) + 1)) & MASK64)
    return s


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection of the short tail."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: MutableSequence[T]) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, items: Sequence[T], k: int) -> list[T]:
        """``k`` items without replacement, in draw order (partial Fisher-Yates)."""
        pool = list(items)
        if not 0 <= k <= len(pool):
            raise ValueError("sample size out of range")
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def choice_weighted(self, weights: Sequence[float]) -> int:
        u = self.random() * math.fsum(weights)
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                return i
        # float round-off at the top end: last positive weight
        for i in range(len(weights) - 1, -1, -1):
            if weights[i] > 0:
                return i
        raise ValueError("all weights are zero")

    def poisson(self, lam: float) -> int:
        """Poisson draw by sequential inversion; fine for the small rates used here."""
        if lam < 0:
            raise ValueError("lam must be >= 0")
        if lam == 0:
            return 0
        if lam > 500:
            # normal approximation keeps the loop bounded for silly inputs
            u1, u2 = self.random(), self.random()
            z = math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2 * math.pi * u2)
            return max(0, int(round(lam + math.sqrt(lam) * z)))
        u = self.random()
        k = 0
        p = math.exp(-lam)
        cdf = p
        while u >= cdf:
            k += 1
            p *= lam / k
            cdf += p
            if p == 0.0:
                break
        return k
