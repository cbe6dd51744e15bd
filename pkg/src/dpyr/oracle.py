"""Slow, direct reference implementations and seeded random instances.

Nothing here calls the fast paths it is used to check. Random instances come
from numpy's PCG64 bit generator seeded with the 64-bit ``RngSpec.seed``, so a
seed reproduces the same instance sequence on any platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, FeatureMap, ParameterError
from .dt_pool import Deformation1D, Deformation2D, DtResult1D, DtResult2D
from .filter_conv import Filter
from .model import Component, DpmModel, FeatureSpec, Part, RawDeformation


@dataclass(frozen=True)
class RngSpec:
    seed: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class ModelLimits:
    components: int = 3
    parts: int = 4
    root_rows: int = 5
    root_cols: int = 5
    part_size: int = 3
    channels: int = 8


def _tie_key(val, r, q):
    return (-val, abs(r), q)


def naive_dt1d(f, deformation: Deformation1D) -> DtResult1D:
    """Direct O(n^2) maximisation over every q; same tie rule as the fast path."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise DomainError("naive_dt1d needs a non-empty 1D input")
    a, b = float(deformation.a), float(deformation.b)
    if not a > 0:
        raise ParameterError("quadratic coefficient must be > 0")
    n = f.size
    q = np.arange(n)
    values = np.empty(n)
    argmax = np.empty(n, dtype=np.int64)
    for p in range(n):
        r = (p - q).astype(np.float64)
        cand = f - (a * r * r + b * r)
        best = cand.max()
        ties = np.nonzero(cand == best)[0]
        pick = min(ties, key=lambda j: (abs(p - j), j))
        values[p] = cand[pick]
        argmax[p] = pick
    return DtResult1D(values, argmax)


def naive_dt2d(g, deformation: Deformation2D) -> DtResult2D:
    """Quadruple loop over p and q.

    Among maximisers of the total, the smallest |dy| then smaller qy wins;
    within that row the placement maximising the row term ``g - dx`` wins,
    ties by |dx| then qx. Looking at the row term keeps float-only ties (an
    addend absorbed by rounding) resolved the way exact arithmetic would.
    """
    g = np.asarray(g, dtype=np.float64)
    rows, cols = g.shape
    ax, bx = deformation.x.a, deformation.x.b
    ay, by = deformation.y.a, deformation.y.b
    qy, qx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    values = np.empty((rows, cols))
    arg_y = np.empty((rows, cols), dtype=np.int64)
    arg_x = np.empty((rows, cols), dtype=np.int64)
    for py in range(rows):
        ry = (py - qy).astype(np.float64)
        for px in range(cols):
            rx = (px - qx).astype(np.float64)
            row_term = g - (ax * rx * rx + bx * rx)
            cand = row_term - (ay * ry * ry + by * ry)
            best = cand.max()
            ty = min({int(t) for t in np.nonzero(cand == best)[0]}, key=lambda t: (abs(py - t), t))
            row = row_term[ty]
            tx = min(np.nonzero(row == row.max())[0], key=lambda t: (abs(px - t), t))
            values[py, px] = cand[ty, tx]
            arg_y[py, px] = ty
            arg_x[py, px] = tx
    return DtResult2D(values, arg_y, arg_x)


def naive_max_pool_1d(f, k: int) -> np.ndarray:
    """max_q f(q) - d_max(p - q) with d_max zero on -k..k and infinite elsewhere."""
    f = [float(x) for x in f]
    n = len(f)
    out = np.empty(n)
    for p in range(n):
        best = -math.inf
        for q in range(n):
            penalty = 0.0 if abs(p - q) <= k else math.inf
            best = max(best, f[q] - penalty)
        out[p] = best
    return out


def naive_window_max_2d(m, k: int, stride: int = 1) -> np.ndarray:
    data = m.data if isinstance(m, FeatureMap) else np.asarray(m)
    rows, cols, ch = data.shape
    out = np.empty((-(-rows // stride), -(-cols // stride), ch), dtype=data.dtype)
    for oy, y in enumerate(range(0, rows, stride)):
        for ox, x in enumerate(range(0, cols, stride)):
            win = data[max(0, y - k):y + k + 1, max(0, x - k):x + k + 1, :]
            out[oy, ox] = win.reshape(-1, ch).max(axis=0)
    return out


def naive_dot(level, flt, y: int, x: int) -> float:
    data = level.data if isinstance(level, FeatureMap) else np.asarray(level)
    w = flt.weights if isinstance(flt, Filter) else np.asarray(flt)
    win = data[y:y + w.shape[0], x:x + w.shape[1], :].astype(np.float64)
    return float(np.sum(win * w.astype(np.float64)))


def naive_response(level, flt) -> np.ndarray:
    """Correlation by one explicit dot product per output cell."""
    data = level.data if isinstance(level, FeatureMap) else np.asarray(level)
    w = flt.weights if isinstance(flt, Filter) else np.asarray(flt)
    rows = data.shape[0] - w.shape[0] + 1
    cols = data.shape[1] - w.shape[1] + 1
    out = np.empty((max(rows, 0), max(cols, 0)))
    for y in range(out.shape[0]):
        for x in range(out.shape[1]):
            out[y, x] = naive_dot(data, w, y, x)
    return out


def naive_window_score(level: FeatureMap, comp: Component, s, responses=None) -> float:
    """Root score at ``s = (x, y)`` plus every part's best penalised placement plus bias.

    ``responses`` may carry precomputed ``naive_response`` maps for the parts.
    """
    sx, sy = s
    total = naive_dot(level, comp.root, sy, sx)
    for i, part in enumerate(comp.parts):
        resp = responses[i] if responses is not None else naive_response(level, part.filter)
        vx, vy = part.anchor
        if resp.size == 0 or not (0 <= sy + vy < resp.shape[0] and 0 <= sx + vx < resp.shape[1]):
            return -math.inf
        d = part.deformation
        qy, qx = np.meshgrid(np.arange(resp.shape[0]), np.arange(resp.shape[1]), indexing="ij")
        ry = (qy - sy - vy).astype(np.float64)
        rx = (qx - sx - vx).astype(np.float64)
        cand = resp - (d.ax * rx * rx + d.bx * rx) - (d.ay * ry * ry + d.by * ry)
        total += float(cand.max())
    return total + comp.bias


def naive_score_map(level: FeatureMap, comp: Component) -> np.ndarray:
    rows = level.rows - comp.root.rows + 1
    cols = level.cols - comp.root.cols + 1
    responses = [naive_response(level, p.filter) for p in comp.parts]
    out = np.empty((rows, cols))
    for y in range(rows):
        for x in range(cols):
            out[y, x] = naive_window_score(level, comp, (x, y), responses)
    return out


def naive_maxout(maps) -> tuple[np.ndarray, np.ndarray]:
    rows = max(m.shape[0] for m in maps)
    cols = max(m.shape[1] for m in maps)
    combined = np.full((rows, cols), -math.inf)
    winner = np.zeros((rows, cols), dtype=np.int64)
    for y in range(rows):
        for x in range(cols):
            for c, m in enumerate(maps):
                if y < m.shape[0] and x < m.shape[1] and m[y, x] > combined[y, x]:
                    combined[y, x] = m[y, x]
                    winner[y, x] = c
    return combined, winner


def random_map(rng: np.random.Generator, dims) -> FeatureMap:
    rows, cols, ch = dims
    return FeatureMap(rng.uniform(-1.0, 1.0, size=(rows, cols, ch)).astype(np.float32))


def random_deformation(rng: np.random.Generator) -> RawDeformation:
    ax, ay = rng.uniform(0.01, 10.0, size=2)
    bx, by = rng.uniform(-5.0, 5.0, size=2)
    return RawDeformation(float(ax), float(bx), float(ay), float(by))


def random_model(rng: np.random.Generator, limits: ModelLimits = ModelLimits(), channels: int | None = None) -> DpmModel:
    """Random valid model; anchors stay inside the root's cell extent."""
    ch = channels if channels is not None else int(rng.integers(1, limits.channels + 1))
    comps = []
    for _ in range(int(rng.integers(1, limits.components + 1))):
        rr = int(rng.integers(1, limits.root_rows + 1))
        rc = int(rng.integers(1, limits.root_cols + 1))
        root = Filter(rng.uniform(-1, 1, size=(rr, rc, ch)))
        parts = []
        for _ in range(int(rng.integers(0, limits.parts + 1))):
            w = Filter(rng.uniform(-1, 1, size=(limits.part_size, limits.part_size, ch)))
            anchor = (int(rng.integers(0, rc)), int(rng.integers(0, rr)))
            parts.append(Part(w, anchor, random_deformation(rng)))
        comps.append(Component(root, tuple(parts), float(rng.uniform(-1, 1))))
    return DpmModel("random", FeatureSpec("external", ch, 1), tuple(comps))


# --- HOG-31, transcribed step by step -----------------------------------------


def _round_half_away(x):
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def slow_hog31(image, cell: int = 8) -> dict:
    """Per-pixel loop transcription of the HOG-31 recipe.

    Returns the histograms, cell energies, clipped normalisations and features.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, nch = img.shape
    if h < 3 * cell or w < 3 * cell:
        raise DomainError("image too small")
    by, bx = _round_half_away(h / cell), _round_half_away(w / cell)
    hist = np.zeros((by, bx, 18))
    bin_width = 2 * math.pi / 18
    for y in range(1, by * cell - 1):
        for x in range(1, bx * cell - 1):
            cy, cx = min(y, h - 2), min(x, w - 2)
            best_v, gdx, gdy = -1.0, 0.0, 0.0
            for c in range(nch):
                ddy = img[cy + 1, cx, c] - img[cy - 1, cx, c]
                ddx = img[cy, cx + 1, c] - img[cy, cx - 1, c]
                v = ddx * ddx + ddy * ddy
                if v > best_v:
                    best_v, gdx, gdy = v, ddx, ddy
            mag = math.sqrt(best_v)
            theta = math.atan2(gdy, gdx) % (2 * math.pi)
            t = theta / bin_width
            o0 = math.floor(t)
            frac = t - o0
            bins = ((o0 % 18, 1 - frac), ((o0 + 1) % 18, frac))
            yp = (y + 0.5) / cell - 0.5
            xp = (x + 0.5) / cell - 0.5
            iy, ix = math.floor(yp), math.floor(xp)
            fy, fx = yp - iy, xp - ix
            for ny, wy in ((iy, 1 - fy), (iy + 1, fy)):
                for nx, wx in ((ix, 1 - fx), (ix + 1, fx)):
                    if 0 <= ny < by and 0 <= nx < bx:
                        for o, wo in bins:
                            hist[ny, nx, o] += wy * wx * wo * mag
    energy = np.zeros((by, bx))
    for yy in range(by):
        for xx in range(bx):
            energy[yy, xx] = sum((hist[yy, xx, o] + hist[yy, xx, o + 9]) ** 2 for o in range(9))
    oy, ox = by - 2, bx - 2
    feats = np.zeros((oy, ox, 31))
    clipped = np.zeros((4, oy, ox, 18))
    folded = np.zeros((oy, ox, 9))
    for y in range(oy):
        for x in range(ox):
            norms = []
            for r, c in ((y + 1, x + 1), (y, x + 1), (y + 1, x), (y, x)):
                e = energy[r, c] + energy[r + 1, c] + energy[r, c + 1] + energy[r + 1, c + 1]
                norms.append(1.0 / math.sqrt(e + 1e-4))
            src = hist[y + 1, x + 1]
            texture = [0.0] * 4
            for o in range(18):
                hs = [min(src[o] * n, 0.2) for n in norms]
                for i in range(4):
                    clipped[i, y, x, o] = hs[i]
                    texture[i] += hs[i]
                feats[y, x, o] = sum(hs) / 4
            for o in range(9):
                s = src[o] + src[o + 9]
                folded[y, x, o] = s
                feats[y, x, 18 + o] = sum(min(s * n, 0.2) for n in norms) / 4
            for i in range(4):
                feats[y, x, 27 + i] = 0.2357 * texture[i]
    return {"hist": hist, "energy": energy, "clipped": clipped, "folded": folded, "features": feats}
