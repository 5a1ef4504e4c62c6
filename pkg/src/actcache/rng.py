"""Deterministic 64-bit RNG behind every shuffle in the package.

The generator is self-contained (no dependence on numpy or the platform)
so epoch orders derived from a seed can be reproduced bit-for-bit by any
external reader of the cache format. The exact algorithm is part of the
file-format contract, see docs/FORMAT.md.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(value: int) -> int:
    """SplitMix64 finalizer: avalanche a 64-bit value."""
    z = value & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Tiny deterministic generator; use one instance per shuffle."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        return self.next_u64() % n


def shuffled(count: int, rng: SplitMix64) -> list[int]:
    """Fisher-Yates permutation of range(count), highest index first."""
    order = list(range(count))
    for i in range(count - 1, 0, -1):
        j = rng.randrange(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def permutation(count: int, seed: int) -> list[int]:
    return shuffled(count, SplitMix64(seed))


def stream_seed(seed: int, ordinal: int) -> int:
    """Sub-seed for the shuffle inside chunk `ordinal` of an epoch stream."""
    return mix64((seed ^ ((ordinal + 1) * GOLDEN_GAMMA)) & MASK64)
