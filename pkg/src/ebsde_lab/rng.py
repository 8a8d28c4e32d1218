"""Counter-based random streams.

Every stochastic routine in the package draws from a Philox generator keyed
by ``(seed, stream, chunk)``.  Streams separate independent uses inside one
operation (path noise, probe points, initial sampling, ...) and chunks slice
a stream along simulated time so that any block of noise increments can be
regenerated independently -- this is what lets the backward BSDE pass rebuild
forward states from sparse checkpoints instead of storing whole trajectories.
"""

from __future__ import annotations

import numpy as np

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF

# Stream ids used across the package; values are arbitrary but frozen, since
# changing them changes every seeded result.
STREAM_PATH = 0
STREAM_PROBE = 1
STREAM_INIT = 2
STREAM_PAIRS = 3
STREAM_INVARIANT = 4
STREAM_CHECK = 5


def generator(seed: int, stream: int = 0, chunk: int = 0) -> np.random.Generator:
    """Philox generator for one (seed, stream, chunk) cell.

    ``stream`` and ``chunk`` must fit in 32 bits; the pair is packed into the
    second key word so distinct cells never collide for a fixed seed.
    """
    if not 0 <= stream <= _MASK32 or not 0 <= chunk <= _MASK32:
        raise ValueError("stream and chunk must be 32-bit non-negative integers")
    key = np.array(
        [int(seed) & _MASK64, ((stream & _MASK32) << 32) | (chunk & _MASK32)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def normal_chunk(seed, stream, chunk, shape, scale=1.0):
    """Deterministic block of N(0, scale^2) draws for one chunk."""
    return generator(seed, stream, chunk).normal(0.0, scale, size=shape)


def uniform_ball(rng: np.random.Generator, n_points: int, dim: int, radius: float,
                 center=None) -> np.ndarray:
    """Uniform samples from a Euclidean ball, shape (n_points, dim)."""
    raw = rng.normal(size=(n_points, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radii = radius * rng.uniform(size=(n_points, 1)) ** (1.0 / dim)
    pts = raw / norms * radii
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts
