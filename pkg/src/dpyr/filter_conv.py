"""Multi-channel valid cross-correlation of feature maps with filters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, FeatureMap, ShapeError


@dataclass(frozen=True, eq=False)
class Filter:
    """A rows x cols x channels float32 template in correlation orientation."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float32)
        if w.ndim != 3 or min(w.shape) < 1:
            raise ShapeError(f"filter must be a non-empty 3D array, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise DomainError("filter weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    @property
    def channels(self) -> int:
        return self.weights.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.weights.shape

    def __eq__(self, other):
        if not isinstance(other, Filter):
            return NotImplemented
        return self.weights.shape == other.weights.shape and np.array_equal(
            self.weights.view(np.uint32), other.weights.view(np.uint32))

    __hash__ = None


def _as_array(x, attr):
    if hasattr(x, attr):
        x = getattr(x, attr)
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ShapeError(f"expected a 3D array, got shape {arr.shape}")
    return arr


def cross_correlate(m, f) -> np.ndarray:
    """Valid correlation (no flip, no padding) accumulated in float64.

    ``m`` is a :class:`FeatureMap` or a (rows, cols, channels) array; ``f`` a
    :class:`Filter` or array of matching channel count. The output has shape
    ``(m.rows - f.rows + 1, m.cols - f.cols + 1)``.
    """
    x = _as_array(m, "data").astype(np.float64, copy=False)
    w = _as_array(f, "weights").astype(np.float64, copy=False)
    mr, mc, ch = x.shape
    fr, fc, fch = w.shape
    if fch != ch:
        raise ShapeError(f"channel mismatch: map has {ch}, filter has {fch}")
    if fr > mr or fc > mc:
        raise ShapeError(f"filter {fr}x{fc} larger than map {mr}x{mc}")
    out_r, out_c = mr - fr + 1, mc - fc + 1
    out = np.zeros((out_r, out_c), dtype=np.float64)
    # fixed (dy, dx) accumulation order keeps results reproducible
    for dy in range(fr):
        for dx in range(fc):
            out += x[dy:dy + out_r, dx:dx + out_c, :] @ w[dy, dx, :]
    return out
