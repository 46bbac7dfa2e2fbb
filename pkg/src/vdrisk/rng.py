"""Portable counter-based random streams.

Every draw is a pure function of ``(seed, stream, counter)``: the stream key is
``mix(seed_key + GOLDEN * (stream + 1))`` and draw ``k`` of that stream is
``mix(stream_key + GOLDEN * (k + 1))``, where ``mix`` is the SplitMix64
finalizer.  Only wrapping 64-bit integer arithmetic is involved, so the raw
bits are identical on every platform and independent of evaluation order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


def mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(x, dtype=np.uint64).copy()
    with np.errstate(over="ignore"):
        z ^= z >> _S30
        z *= _M1
        z ^= z >> _S27
        z *= _M2
        z ^= z >> _S31
    return z


def _as_u64(values) -> np.ndarray:
    return np.asarray(values, dtype=np.int64).astype(np.uint64)


class Streams:
    """Family of independent streams derived from one 64-bit seed.

    Parameters
    ----------
    seed : int
        Any integer; reduced modulo 2**64.
    domain : int
        Sub-key separating unrelated uses of the same seed (cohort draws,
        split permutations, ...).
    """

    def __init__(self, seed: int, domain: int = 0):
        seed = int(seed) % (1 << 64)
        base = mix64(np.array([seed], dtype=np.uint64))
        with np.errstate(over="ignore"):
            base = mix64(base + GOLDEN * np.uint64(int(domain) % (1 << 64) + 1))
        self._key = base[0]

    def bits(self, streams, counter: int) -> np.ndarray:
        """Raw 64-bit draw number ``counter`` for each stream index."""
        s = _as_u64(streams)
        with np.errstate(over="ignore"):
            keys = mix64(self._key + GOLDEN * (s + np.uint64(1)))
            return mix64(keys + GOLDEN * np.uint64(int(counter) + 1))

    def uniform(self, streams, counter: int) -> np.ndarray:
        """Uniform doubles strictly inside (0, 1), 53 bits of resolution."""
        b = self.bits(streams, counter) >> np.uint64(11)
        return (b.astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, streams, counter: int) -> np.ndarray:
        """Standard normal draws by inverse-CDF transform."""
        return ndtri(self.uniform(streams, counter))

    def exponential(self, streams, counter: int) -> np.ndarray:
        """Unit-rate exponential draws by inverse-CDF transform."""
        return -np.log(self.uniform(streams, counter))

    def permutation(self, n: int, counter: int = 0) -> np.ndarray:
        """Permutation of ``range(n)`` ordered by random 64-bit keys."""
        keys = self.bits(np.arange(n), counter)
        return np.argsort(keys, kind="stable")
