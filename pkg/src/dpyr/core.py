"""Shared value types and coordinate conventions.

Feature maps are ``(rows, cols, channels)`` float32 arrays (channel fastest in
row-major order). Score grids are plain 2D float64 arrays where ``-inf`` marks
an undefined score. Boxes use inclusive, zero-based pixel coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Array shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Input lies outside the domain of an operation (empty, too small, ...)."""


class ParameterError(ValueError):
    """A model or operator parameter violates its constraints."""


class ConfigurationError(ValueError):
    """Inputs are individually valid but do not fit together."""


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """One pyramid level: a rows x cols x channels grid of float32 features."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"feature map must be a non-empty 3D array, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise DomainError("feature map contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(
            self.data.view(np.uint32), other.data.view(np.uint32))

    __hash__ = None


def as_grid(values) -> np.ndarray:
    """Return ``values`` as a 2D float64 score grid, rejecting NaN."""
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2:
        raise ShapeError(f"score grid must be 2D, got shape {grid.shape}")
    if np.isnan(grid).any():
        raise DomainError("score grid contains NaN")
    return grid


@dataclass(frozen=True, order=True)
class BBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise DomainError(f"invalid box {self.as_list()}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1 + 1

    @property
    def height(self) -> int:
        return self.y2 - self.y1 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]


def intersection_area(a: BBox, b: BBox) -> int:
    w = min(a.x2, b.x2) - max(a.x1, b.x1) + 1
    h = min(a.y2, b.y2) - max(a.y1, b.y1) + 1
    if w <= 0 or h <= 0:
        return 0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union with the inclusive (+1) area convention."""
    inter = intersection_area(a, b)
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    component: int
    level: int
    part_boxes: tuple[BBox, ...] = ()
    # indices of parts whose box leaves the image (part boxes are never clipped)
    parts_out_of_bounds: tuple[int, ...] = field(default=())

    def to_dict(self) -> dict:
        doc = {
            "box": self.box.as_list(),
            "score": self.score,
            "component": self.component,
            "level": self.level,
            "parts": [b.as_list() for b in self.part_boxes],
        }
        if self.parts_out_of_bounds:
            doc["parts_out_of_bounds"] = list(self.parts_out_of_bounds)
        return doc
