"""Counter-based per-path random streams.

Every path owns a Philox stream keyed by (seed, path index), and distinct
draw purposes within a path live in disjoint counter blocks.  Draws for path
p therefore never depend on the batch size, which makes ensembles bit-stable
when the path count changes and embarrassingly parallel in principle.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Purpose ids: disjoint 2^128-sized counter blocks inside one path stream.
PURPOSE_INITIAL = 0
PURPOSE_STATE_NOISE = 1
PURPOSE_OBS_NOISE = 2  # + dm index
PURPOSE_RELAXED = 64  # + dm index


def path_stream(seed: int, path: int, purpose: int = 0) -> np.random.Generator:
    """Generator for one (seed, path, purpose) triple."""
    key = np.array([seed & _MASK64, path & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, purpose & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def normal_block(seed: int, n_paths: int, shape: tuple, purpose: int) -> np.ndarray:
    """Standard normals [n_paths, *shape], one stream per path."""
    out = np.empty((n_paths,) + tuple(shape), dtype=np.float64)
    flat = out.reshape(n_paths, -1)
    per_path = flat.shape[1]
    for p in range(n_paths):
        flat[p] = path_stream(seed, p, purpose).standard_normal(per_path)
    return out


def uniform_block(seed: int, n_paths: int, shape: tuple, purpose: int) -> np.ndarray:
    """Uniform(0,1) draws [n_paths, *shape], one stream per path."""
    out = np.empty((n_paths,) + tuple(shape), dtype=np.float64)
    flat = out.reshape(n_paths, -1)
    per_path = flat.shape[1]
    for p in range(n_paths):
        flat[p] = path_stream(seed, p, purpose).random(per_path)
    return out
