"""Deterministic random generation for dataset synthesis.

SplitMix64 with the published constants.  Unlike library PRNGs, the whole
algorithm is pinned here, so a (seed, config) pair produces byte-identical
datasets on any platform or numpy version.  Seed splitting maps a master
seed plus a sample index to an independent per-sample seed, which makes
generation order-independent and safely parallel.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer: avalanching 64-bit mix of the input."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Per-index stream seed: the index-th raw SplitMix64 output for master_seed."""
    return mix64((master_seed + (index + 1) * _GOLDEN_GAMMA) & _MASK64)


class SplitMix64:
    """Sequential SplitMix64 generator with the sampling helpers the renderer needs.

    gauss() consumes exactly two outputs per call (Box-Muller, no caching),
    so the stream position is a pure function of the call sequence.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN_GAMMA) & _MASK64
        return mix64(self._state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform float in [lo, hi): 53-bit mantissa from the top of one output."""
        u = (self.next_u64() >> 11) * (2.0 ** -53)
        return lo + (hi - lo) * u

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive (modulo bias < span/2^64)."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        u1 = ((self.next_u64() >> 11) + 0.5) * (2.0 ** -53)  # (0, 1), never 0
        u2 = (self.next_u64() >> 11) * (2.0 ** -53)
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mu + sigma * z

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]
