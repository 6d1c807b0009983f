"""Deterministic pseudo-random generation based on splitmix64.

splitmix64 is mandated (as an algorithm, not a library) so that seeded
results — bootstrap samples, shuffles, fold assignments — are bit-for-bit
reproducible across implementations and platforms. The contract pinned
here and relied on by model training and cross-validation:

* ``next_u64``: state advances by the golden-gamma constant, output is the
  finalized mix of the new state.
* ``next_below(n)``: ``next_u64() % n``.
* ``shuffle``: Fisher-Yates from the top, ``for i in n-1..1: j =
  next_below(i + 1); swap(a[i], a[j])``.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 stream seeded with a 64-bit integer."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Uniform-ish integer in [0, n); defined as next_u64() % n."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def next_float(self) -> float:
        """Uniform in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle (top-down variant pinned above)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]


def permutation(n: int, seed: int) -> list[int]:
    """Seeded permutation of range(n)."""
    items = list(range(n))
    SplitMix64(seed).shuffle(items)
    return items
