"""Seedable random streams.

Every stochastic term in the package draws from an :class:`RngStream`.
A stream wraps numpy's ``MT19937`` bit generator.  The run index is mixed
into the seed through ``numpy.random.SeedSequence([seed, run_index])``,
which hashes the pair into the Mersenne-Twister state, so ensemble members
get independent streams without any coordination.

Normals are produced by numpy's ziggurat sampler (``standard_normal``) and
uniforms by ``random`` scaled onto ``[lo, hi)``.  These two methods are used
everywhere in the package; drawing a block of ``k`` values gives the same
numbers as ``k`` single draws.
"""

from __future__ import annotations

import numpy as np


class InvalidParameterError(ValueError):
    """A distribution or model parameter is outside its admissible range."""


def _count(size) -> int:
    if size is None:
        return 1
    if isinstance(size, (int, np.integer)):
        return int(size)
    return int(np.prod(size))


class RngStream:
    """Single-owner random stream; not safe to share between runs."""

    def __init__(self, seed: int, run_index: int = 0):
        if seed < 0 or run_index < 0:
            raise InvalidParameterError("seed and run_index must be non-negative")
        self.seed = int(seed)
        self.run_index = int(run_index)
        seq = np.random.SeedSequence([self.seed, self.run_index])
        self._gen = np.random.Generator(np.random.MT19937(seq))
        self.draw_count = 0

    def __repr__(self):
        return (f"RngStream(seed={self.seed}, run_index={self.run_index}, "
                f"draw_count={self.draw_count})")

    def normal(self, mean=0.0, stddev=1.0, size=None):
        if stddev < 0:
            raise InvalidParameterError(f"negative standard deviation {stddev}")
        z = self._gen.standard_normal(size)
        self.draw_count += _count(size)
        if stddev == 0:
            return mean if size is None else np.full(size, float(mean))
        return mean + stddev * z

    def uniform(self, lo=0.0, hi=1.0, size=None):
        if lo > hi:
            raise InvalidParameterError(f"empty interval [{lo}, {hi}]")
        u = self._gen.random(size)
        self.draw_count += _count(size)
        if lo == hi:
            return lo if size is None else np.full(size, float(lo))
        return lo + (hi - lo) * u


def make_stream(seed: int, run_index: int = 0) -> RngStream:
    return RngStream(seed, run_index)


def draw_normal(stream: RngStream, mean: float = 0.0, stddev: float = 1.0) -> float:
    """One draw from N(mean, stddev**2); ``stddev == 0`` returns ``mean`` exactly."""
    return stream.normal(mean, stddev)


def draw_uniform(stream: RngStream, lo: float = 0.0, hi: float = 1.0) -> float:
    """One draw from U[lo, hi]; ``lo == hi`` returns ``lo`` exactly."""
    return stream.uniform(lo, hi)
