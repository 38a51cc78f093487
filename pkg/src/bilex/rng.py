"""Portable deterministic random streams.

Every stochastic choice in the pipeline is drawn from a splitmix64 stream
whose state is derived from the experiment seed plus string key parts
(typically a dialogue id and a purpose tag). Keying per item means partial
rebuilds and parallel builds make identical choices, and the generator is
simple enough to reimplement bit-for-bit anywhere.
"""

from __future__ import annotations

from typing import Sequence, TypeVar

_MASK64 = (1 << 64) - 1

# Recorded in manifests so outputs can be reproduced outside this package.
PRNG_NAME = "splitmix64(fnv1a64-keyed)"

T = TypeVar("T")


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & _MASK64
    return h


def key_hash(seed: int, *parts: str) -> int:
    """Collapse a 64-bit seed and string key parts into one 64-bit state."""
    blob = (seed & _MASK64).to_bytes(8, "little")
    for part in parts:
        blob += b"\x1f" + part.encode("utf-8")
    return fnv1a64(blob)


class SplitMix64:
    """splitmix64 sequence starting from an explicit 64-bit state."""

    __slots__ = ("_state",)

    def __init__(self, state: int):
        self._state = state & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            u = self.next_u64()
            if u <= limit:
                return u % n

    def choice(self, seq: Sequence[T]) -> T:
        return seq[self.below(len(seq))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def stream(seed: int, *parts: str) -> SplitMix64:
    """The canonical stream for (seed, *parts); same arguments, same draws."""
    return SplitMix64(key_hash(seed, *parts))
