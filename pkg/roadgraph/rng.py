"""Portable seeded PRNG for control-node and seed sampling.

Metric results must be reproducible across platforms and library versions,
so sampling does not go through ``random`` or ``numpy.random``. The
generator is xorshift64* with splitmix64 seeding, all arithmetic mod 2**64:

    seeding   z = seed + 0x9E3779B97F4A7C15
              z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
              z = (z ^ (z >> 27)) * 0x94D049BB133111EB
              state = z ^ (z >> 31)          (0 is replaced by 0x9E3779B97F4A7C15)
    step      x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27
    output    x * 0x2545F4914F6CDD1D

``below(n)`` draws uniformly from ``[0, n)`` by rejecting outputs at or above
the largest multiple of ``n`` that fits in 64 bits. ``sample`` is a partial
Fisher–Yates shuffle over a copy of the population.
"""

from typing import Sequence, TypeVar

T = TypeVar("T")

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(seed: int) -> int:
    z = (seed + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class Xorshift64Star:
    """xorshift64* generator; see the module docstring for the exact algorithm."""

    def __init__(self, seed: int) -> None:
        self._state = splitmix64(seed & _MASK) or _GOLDEN

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def random(self) -> float:
        """Uniform float in ``[0, 1)`` with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def sample(self, population: Sequence[T], k: int) -> list[T]:
        """``k`` distinct items in selection order (all of them if ``k >= len``)."""
        pool = list(population)
        k = min(k, len(pool))
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
