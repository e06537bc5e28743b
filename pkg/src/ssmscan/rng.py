"""Deterministic seeding utilities.

Everything random in this package flows from one root seed. Components get
their own streams via ``split_seed(root, label)`` so that, e.g., changing the
language-model size never shifts the encoder weights. The stub encoders use
the SplitMix64 stream directly because their outputs must be bit-identical
across platforms and numpy versions; heavier initializations use numpy's
PCG64 seeded from a split.

SplitMix64 (the documented generator):

    state <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z <- state
    z <- (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2^64
    z <- (z XOR (z >> 27)) * 0x94D049BB133111EB   mod 2^64
    output: z XOR (z >> 31)

Uniform doubles in [0, 1) are formed as ``(output >> 11) * 2**-53``, i.e.
from the top 53 bits, which is exact in IEEE-754 binary64.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """Tiny, fully specified 64-bit PRNG (see module docstring)."""

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * 2.0 ** -53
        return lo + (hi - lo) * u

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = [self.uniform(lo, hi) for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(shape)


def split_seed(root: int, label: str) -> int:
    """Derive a component seed from ``root`` and a text label.

    The label bytes are folded into a SplitMix64 stream seeded with the root,
    one byte per step, and the final output is the derived seed. Labels in
    use: ``encoder-a``, ``encoder-b``, ``connector``, ``lm``, ``bench``.
    """
    gen = SplitMix64(root)
    out = gen.next_u64()
    for byte in label.encode("utf-8"):
        gen._state ^= byte
        out = gen.next_u64()
    return out


def generator(root: int, label: str) -> np.random.Generator:
    """numpy Generator seeded from a labelled split of the root seed."""
    return np.random.Generator(np.random.PCG64(split_seed(root, label)))
