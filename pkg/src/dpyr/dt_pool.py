"""Distance-transform pooling of sampled functions.

For a penalty ``d(r) = a*r**2 + b*r`` with ``a > 0`` the transform is::

    D[p] = max_q f[q] - d(p - q)

computed in linear time with the lower (here: upper) envelope of parabolas.
The linear term is absorbed by rooting parabola ``q`` at ``q - b/(2a)``.

Argmax ties are broken toward the smallest displacement ``|p - q|`` and then
the smaller ``q``. In 2D the column pass decides first: among maximising rows
the smallest ``|dy|`` then smaller ``qy`` wins, and inside that row the
row-pass maximiser (same 1D rule) gives ``x``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np
from scipy import ndimage

from .core import DomainError, FeatureMap, ParameterError, as_grid

# slack when deciding whether a neighbouring envelope segment touches p
_TOUCH_EPS = 1e-6
# parabolas whose envelope interval is empty only by rounding are kept as tie candidates
_KEEP_EPS = 1e-9

# selftest hook: when set, kernels use a deliberately wrong intersection formula
_FAULT = False


@dataclass(frozen=True)
class Deformation1D:
    a: float
    b: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ParameterError(f"quadratic coefficient must be > 0 (penalty not convex), got a={self.a}")

    def __call__(self, r):
        return self.a * r * r + self.b * r


@dataclass(frozen=True)
class Deformation2D:
    x: Deformation1D
    y: Deformation1D

    @classmethod
    def from_coeffs(cls, ax, bx, ay, by) -> "Deformation2D":
        return cls(Deformation1D(ax, bx), Deformation1D(ay, by))


class DtResult1D(NamedTuple):
    values: np.ndarray
    argmax: np.ndarray


class DtResult2D(NamedTuple):
    values: np.ndarray
    argmax_y: np.ndarray
    argmax_x: np.ndarray


def _dt1d_core(f, a, b, values, argmax, v, z, fault):
    n = f.shape[0]
    shift = b / (2.0 * a)
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        while True:
            vk = v[k]
            if fault:
                s = (f[vk] - f[q]) / (2.0 * a * (q - vk)) + (q + vk) / 2.0
            else:
                s = (f[vk] - f[q]) / (2.0 * a * (q - vk)) + ((q + vk) / 2.0 - shift)
            if s < z[k] - _KEEP_EPS * (1.0 + abs(s)):
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    m = k + 1

    k = 0
    for p in range(n):
        while z[k + 1] < p:
            k += 1
        eps = _TOUCH_EPS * (1.0 + abs(p))
        lo = k - 1 if k > 0 else 0
        while lo > 0 and z[lo] >= p - eps:
            lo -= 1
        hi = k + 1 if k + 1 < m else m - 1
        while hi < m - 1 and z[hi + 1] <= p + eps:
            hi += 1
        best_q = -1
        best = -np.inf
        best_r = 0
        for j in range(lo, hi + 1):
            q = v[j]
            r = p - q
            val = f[q] - (a * r * r + b * r)
            ar = abs(r)
            if best_q < 0 or val > best or (val == best and (ar < best_r or (ar == best_r and q < best_q))):
                best = val
                best_q = q
                best_r = ar
        values[p] = best
        argmax[p] = best_q


_dt1d_jit = numba.njit(cache=True, nogil=True)(_dt1d_core)


@numba.njit(cache=True, nogil=True)
def _dt2d_kernel(g, ax, bx, ay, by, out, iy, ix, fault):
    rows, cols = g.shape
    n = max(rows, cols)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    mid = np.empty((rows, cols), dtype=np.float64)
    row_vals = np.empty(cols, dtype=np.float64)
    row_arg = np.empty(cols, dtype=np.int64)
    for y in range(rows):
        _dt1d_jit(g[y].copy(), ax, bx, row_vals, row_arg, v, z, fault)
        mid[y, :] = row_vals
        ix[y, :] = row_arg
    col_vals = np.empty(rows, dtype=np.float64)
    col_arg = np.empty(rows, dtype=np.int64)
    for x in range(cols):
        _dt1d_jit(mid[:, x].copy(), ay, by, col_vals, col_arg, v, z, fault)
        out[:, x] = col_vals
        iy[:, x] = col_arg


@contextlib.contextmanager
def injected_fault():
    """Run the fast DT with a corrupted intersection formula (selftest smoke check)."""
    global _FAULT
    old, _FAULT = _FAULT, True
    try:
        yield
    finally:
        _FAULT = old


def dt1d(f, deformation: Deformation1D) -> DtResult1D:
    """Linear-time distance transform of the 1D sampled function ``f``."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise DomainError("dt1d needs a non-empty 1D input")
    if not np.isfinite(f).all():
        raise DomainError("dt1d input must be finite")
    a, b = float(deformation.a), float(deformation.b)
    if not a > 0:
        raise ParameterError(f"quadratic coefficient must be > 0, got {a}")
    n = f.size
    values = np.empty(n, dtype=np.float64)
    argmax = np.empty(n, dtype=np.int64)
    _dt1d_jit(f, a, b, values, argmax, np.empty(n, dtype=np.int64), np.empty(n + 1), _FAULT)
    return DtResult1D(values, argmax)


def dt2d(g, deformation: Deformation2D) -> DtResult2D:
    """Separable 2D transform: rows with ``deformation.x``, then columns with ``deformation.y``."""
    g = np.ascontiguousarray(as_grid(g))
    if g.size == 0:
        raise DomainError("dt2d needs a non-empty grid")
    if not np.isfinite(g).all():
        raise DomainError("dt2d input must be finite")
    dx, dy = deformation.x, deformation.y
    if not (dx.a > 0 and dy.a > 0):
        raise ParameterError("quadratic coefficients must be > 0")
    out = np.empty_like(g)
    iy = np.empty(g.shape, dtype=np.int64)
    ix_rows = np.empty(g.shape, dtype=np.int64)
    _dt2d_kernel(g, float(dx.a), float(dx.b), float(dy.a), float(dy.b), out, iy, ix_rows, _FAULT)
    cols = np.arange(g.shape[1])[None, :]
    ix = ix_rows[iy, cols]
    return DtResult2D(out, iy, ix)


def max_pool_1d(f, k: int) -> np.ndarray:
    """Window max over ``p-k .. p+k``, with the window clipped to the grid."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise DomainError("max_pool_1d needs a non-empty 1D input")
    if k < 0:
        raise ParameterError("window half-length must be >= 0")
    # edge replication never adds a value the clipped window lacks, so 'nearest' == clipping
    return ndimage.maximum_filter1d(f, size=2 * k + 1, mode="nearest")


def max_filter_2d(m: FeatureMap, k: int, stride: int = 1) -> FeatureMap:
    """Per-channel (2k+1)x(2k+1) max filter, border-clipped, sampled every ``stride`` cells."""
    if k < 0:
        raise ParameterError("window half-length must be >= 0")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    data = m.data if isinstance(m, FeatureMap) else FeatureMap(m).data
    pooled = ndimage.maximum_filter(data, size=(2 * k + 1, 2 * k + 1, 1), mode="nearest")
    return FeatureMap(pooled[::stride, ::stride])
