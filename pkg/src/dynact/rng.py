"""Deterministic counter-based pseudo-random generator.

Every run owns exactly one 64-bit seed; sub-streams for weight init,
dropout masks, data shuffling, data synthesis and attack starts are
derived from it by fixed offsets, so results are reproducible without
relying on any host-library generator state.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)

# fixed sub-stream offsets; part of the reproducibility contract
STREAM_INIT = 1
STREAM_DROPOUT = 2
STREAM_SHUFFLE = 3
STREAM_DATA = 4
STREAM_ATTACK = 5

GENERATOR_ID = "splitmix64-counter/box-muller"


def _mix(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer (Steele, Lea, Flood 2014); wraparound intended
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class DetRng:
    """SplitMix64 evaluated as a pure function of (key, counter).

    Draw order is part of the contract: n draws advance the counter by
    exactly n, so identical call sequences yield identical values.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        with np.errstate(over="ignore"):
            key = np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN
            key = _mix(key ^ (np.uint64(self.stream & 0xFFFFFFFFFFFFFFFF) * _MIX1))
        self._key = np.uint64(key)
        self._counter = 0

    def substream(self, stream: int) -> "DetRng":
        """Fresh generator for a fixed-offset sub-stream of the same seed."""
        return DetRng(self.seed, self.stream * 1024 + stream)

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix(self._key + idx * _GOLDEN)

    def uniform(self, shape) -> np.ndarray:
        """Uniform float64 in [0, 1) with 53-bit resolution."""
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return u.reshape(shape) if not np.isscalar(shape) else u

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Standard Box-Muller; two uniforms consumed per output value."""
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        u1 = (self.next_u64(n).astype(np.float64) + 1.0) * (2.0 ** -64)  # (0, 1]
        u2 = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        out = mean + std * z
        return out.reshape(shape) if not np.isscalar(shape) else out

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) via argsort of raw draws."""
        return np.argsort(self.next_u64(n), kind="stable")

    def bernoulli(self, shape, p: float) -> np.ndarray:
        """Boolean mask, True with probability p."""
        return self.uniform(shape) < p

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """n integers in [low, high) by rejection-free modulo (desk-scale bias ~2^-64)."""
        span = np.uint64(high - low)
        return (self.next_u64(n) % span).astype(np.int64) + low
