"""Rank-4 tensor primitives shared by every layer in the package.

A "tensor" throughout this package is a plain numpy array of shape
(batch, channels, height, width), C-contiguous (row-major), dtype float32
or float64.  float32 is the training precision; float64 is what the
finite-difference oracle runs in.  All operations here are pure functions
of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SINGLE = np.float32
DOUBLE = np.float64

#: epsilon added inside the square root of every std-dev denominator
EPS = 1e-5


def as_tensor(data, dtype=SINGLE) -> np.ndarray:
    """Coerce ``data`` to a contiguous rank-4 float array."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim != 4:
        raise ValueError(f"expected rank-4 (n, c, h, w) data, got rank {arr.ndim}")
    return arr


@dataclass
class ChannelStats:
    """Per-channel first and second moments of a tensor.

    ``mean`` and ``variance`` have shape (n, c) for per-instance stats (the
    default, used by the normalization layers) or (c,) when pooled across
    the batch.  Variance uses the population convention (divide by the
    element count), which makes standardize-then-recompute an exact round
    trip.
    """

    mean: np.ndarray
    variance: np.ndarray
    eps: float = EPS


def channel_stats(t: np.ndarray, per_instance: bool = True) -> ChannelStats:
    """Mean and population variance per channel.

    Args:
        t: rank-4 tensor.
        per_instance: if True (default) reduce over spatial positions only,
            yielding (n, c) stats; otherwise also pool over the batch,
            yielding (c,) stats.
    """
    if t.size == 0:
        raise ValueError("empty tensor")
    if t.ndim != 4:
        raise ValueError(f"expected rank-4 tensor, got rank {t.ndim}")
    axes = (2, 3) if per_instance else (0, 2, 3)
    return ChannelStats(mean=t.mean(axis=axes), variance=t.var(axis=axes))


def map_elements(t: np.ndarray, f) -> np.ndarray:
    """Apply a scalar function to every element; shape and dtype preserved."""
    return np.vectorize(f, otypes=[t.dtype])(t)


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``alpha * x + y`` elementwise; x and y must have identical shapes."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: x has shape {x.shape}, y has shape {y.shape}")
    return alpha * x + y
