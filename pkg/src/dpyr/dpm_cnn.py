"""The DPM evaluated as an unrolled feed-forward network.

Per component: correlate the level with the root and part filters, DT-pool
each part response, then sum root and pooled parts at their anchor offsets
(the sparse "object geometry" correlation) and add the bias. Components are
combined with an element-wise max (maxout).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, DomainError, FeatureMap, ShapeError, as_grid
from .dt_pool import dt2d
from .filter_conv import cross_correlate
from .model import Component, DpmModel


@dataclass(frozen=True, eq=False)
class ComponentScore:
    scores: np.ndarray
    # per part: (argmax_y, argmax_x) over the whole part-response grid
    part_placements: tuple[tuple[np.ndarray, np.ndarray], ...] = ()


@dataclass(frozen=True, eq=False)
class LevelScores:
    combined: np.ndarray
    winner: np.ndarray
    components: tuple[ComponentScore, ...]

    @property
    def empty(self) -> bool:
        return self.combined.size == 0


@dataclass(frozen=True, eq=False)
class PyramidScores:
    levels: tuple[LevelScores, ...]

    @property
    def empty_levels(self) -> list[int]:
        return [i for i, lv in enumerate(self.levels) if lv.empty]


def geometry_gather(root_scores, part_dts, anchors, bias: float) -> np.ndarray:
    """``out[s] = root[s] + sum_p part_dts[p][s + v_p] + bias``; -inf where any access is out of bounds."""
    root = as_grid(root_scores)
    if len(part_dts) != len(anchors):
        raise ShapeError(f"{len(part_dts)} part maps but {len(anchors)} anchors")
    out = root + float(bias)
    rows, cols = out.shape
    valid = np.ones(out.shape, dtype=bool)
    for dt, (dx, dy) in zip(part_dts, anchors):
        dt = as_grid(dt)
        if dx < 0 or dy < 0:
            raise ShapeError(f"anchors must be non-negative, got {(dx, dy)}")
        # s + v in bounds  <=>  s < dims - v
        h = max(0, min(rows, dt.shape[0] - dy))
        w = max(0, min(cols, dt.shape[1] - dx))
        valid[h:, :] = False
        valid[:, w:] = False
        out[:h, :w] += dt[dy:dy + h, dx:dx + w]
    out[~valid] = -np.inf
    return out


def score_component(level: FeatureMap, comp: Component) -> ComponentScore:
    root = cross_correlate(level, comp.root)
    part_dts, anchors, placements = [], [], []
    for part in comp.parts:
        if part.filter.rows > level.rows or part.filter.cols > level.cols:
            # no placement exists, so every root location is undefined
            empty = np.empty((0, 0), dtype=np.float64)
            part_dts.append(empty)
            placements.append((np.empty((0, 0), np.int64), np.empty((0, 0), np.int64)))
        else:
            res = dt2d(cross_correlate(level, part.filter), part.deformation.to_deformation())
            part_dts.append(res.values)
            placements.append((res.argmax_y, res.argmax_x))
        anchors.append(part.anchor)
    scores = geometry_gather(root, part_dts, anchors, comp.bias)
    return ComponentScore(scores, tuple(placements))


def maxout_combine(per_component) -> tuple[np.ndarray, np.ndarray]:
    """Upper-left aligned element-wise max; winner is the lowest index attaining it."""
    maps = [c.scores if isinstance(c, ComponentScore) else as_grid(c) for c in per_component]
    if not maps:
        raise DomainError("maxout needs at least one component")
    rows = max(m.shape[0] for m in maps)
    cols = max(m.shape[1] for m in maps)
    combined = np.full((rows, cols), -np.inf)
    winner = np.zeros((rows, cols), dtype=np.int64)
    for c, m in enumerate(maps):
        padded = np.full((rows, cols), -np.inf)
        padded[:m.shape[0], :m.shape[1]] = m
        better = padded > combined
        combined[better] = padded[better]
        winner[better] = c
    return combined, winner


def subsample(g, stride: int) -> np.ndarray:
    if stride < 1:
        raise DomainError("stride must be >= 1")
    return as_grid(g)[::stride, ::stride].copy()


def score_level(level: FeatureMap, model: DpmModel) -> LevelScores:
    max_rows, max_cols = model.max_root_shape
    if level.rows < max_rows or level.cols < max_cols:
        return LevelScores(np.empty((0, 0)), np.empty((0, 0), dtype=np.int64), ())
    comps = tuple(score_component(level, c) for c in model.components)
    combined, winner = maxout_combine(comps)
    return LevelScores(combined, winner, comps)


def check_feature_spec(channels: int, stride: int, model: DpmModel) -> None:
    spec = model.feature_spec
    if channels != spec.channels or stride != spec.stride:
        raise ConfigurationError(
            f"feature mismatch: model {model.class_name!r} expects "
            f"(channels={spec.channels}, stride={spec.stride}), "
            f"pyramid has (channels={channels}, stride={stride})")


def score_pyramid(pyr, model: DpmModel, threads: int = 1) -> PyramidScores:
    """Score every (level, component) pair, then maxout per level.

    ``threads`` bounds worker parallelism; the output does not depend on it.
    """
    if pyr.levels:
        check_feature_spec(pyr.levels[0].channels, pyr.stride, model)
    max_rows, max_cols = model.max_root_shape
    jobs = [(li, ci) for li, lv in enumerate(pyr.levels)
            if lv.rows >= max_rows and lv.cols >= max_cols
            for ci in range(len(model.components))]

    def run(job):
        li, ci = job
        return score_component(pyr.levels[li], model.components[ci])

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    by_job = dict(zip(jobs, results))

    levels = []
    for li in range(len(pyr.levels)):
        if (li, 0) not in by_job:
            levels.append(LevelScores(np.empty((0, 0)), np.empty((0, 0), dtype=np.int64), ()))
            continue
        comps = tuple(by_job[li, ci] for ci in range(len(model.components)))
        combined, winner = maxout_combine(comps)
        levels.append(LevelScores(combined, winner, comps))
    return PyramidScores(tuple(levels))


def dense_geometry_filter(anchors) -> np.ndarray:
    """The explicit (P+1)-channel sparse filter: a single one per channel at its anchor."""
    anchors = [(0, 0)] + [tuple(a) for a in anchors]
    rows = 1 + max(dy for _, dy in anchors)
    cols = 1 + max(dx for dx, _ in anchors)
    w = np.zeros((rows, cols, len(anchors)), dtype=np.float64)
    for ch, (dx, dy) in enumerate(anchors):
        w[dy, dx, ch] = 1.0
    return w


def geometry_by_correlation(root_scores, part_dts, anchors, bias: float) -> np.ndarray:
    """Geometry step as an ordinary correlation of the stacked score maps.

    Maps are cropped to their common extent and stacked into P+1 channels; the
    result covers the region where every anchor access is in bounds.
    """
    maps = [as_grid(root_scores)] + [as_grid(d) for d in part_dts]
    rows = min(m.shape[0] for m in maps)
    cols = min(m.shape[1] for m in maps)
    stacked = np.stack([m[:rows, :cols] for m in maps], axis=-1)
    w = dense_geometry_filter(anchors)
    if w.shape[0] > rows or w.shape[1] > cols:
        return np.empty((max(0, rows - w.shape[0] + 1), max(0, cols - w.shape[1] + 1)))
    return cross_correlate(stacked, w) + float(bias)

