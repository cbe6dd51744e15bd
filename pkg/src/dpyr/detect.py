"""Score pyramid -> image-space detections, plus greedy non-maximum suppression."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import BBox, ConfigurationError, Detection, ParameterError, intersection_area, iou
from .features import round_half_away
from .model import DpmModel

NMS_KINDS = ("iou", "legacy-dpm")
DEFAULT_NMS_THRESHOLD = 0.3


@dataclass(frozen=True)
class NmsPolicy:
    kind: str = "iou"
    threshold: float = DEFAULT_NMS_THRESHOLD
    max_detections: int | None = None

    def __post_init__(self):
        if self.kind not in NMS_KINDS:
            raise ParameterError(f"unknown NMS kind {self.kind!r}; choose from {NMS_KINDS}")
        if not 0 < self.threshold < 1:
            raise ParameterError(f"NMS threshold must lie in (0, 1), got {self.threshold}")
        if self.max_detections is not None and self.max_detections < 0:
            raise ParameterError("max_detections must be >= 0")

    def overlap(self, kept: BBox, candidate: BBox) -> float:
        if self.kind == "iou":
            return iou(kept, candidate)
        # voc-release5 convention: fraction of the candidate covered by the kept box
        return intersection_area(kept, candidate) / candidate.area


@dataclass(frozen=True)
class PyramidMeta:
    stride: int
    pad: tuple[int, int]
    scales: tuple[float, ...]
    image_size: tuple[int, int]  # (height, width)

    @classmethod
    def of(cls, pyr) -> "PyramidMeta":
        if pyr.image_size is None:
            raise ConfigurationError("pyramid does not record the source image size")
        return cls(pyr.stride, tuple(pyr.pad), tuple(pyr.scales), tuple(pyr.image_size))


def cell_box(x: int, y: int, rows: int, cols: int, scale: float, meta: PyramidMeta) -> tuple[int, int, int, int]:
    """Unclipped pixel box of a ``rows`` x ``cols`` cell window at padded cell (x, y)."""
    pad_y, pad_x = meta.pad
    k = meta.stride / scale
    return (round_half_away((x - pad_x) * k),
            round_half_away((y - pad_y) * k),
            round_half_away((x - pad_x + cols) * k - 1),
            round_half_away((y - pad_y + rows) * k - 1))


def _clip(box, height, width) -> BBox:
    x1, y1, x2, y2 = box
    x1 = min(max(x1, 0), width - 1)
    x2 = min(max(x2, 0), width - 1)
    y1 = min(max(y1, 0), height - 1)
    y2 = min(max(y2, 0), height - 1)
    return BBox(x1, y1, x2, y2)


def extract_detections(scores, meta: PyramidMeta, model: DpmModel, score_threshold: float) -> list[Detection]:
    """Every finite score >= ``score_threshold`` as a detection with part boxes."""
    if len(scores.levels) != len(meta.scales):
        raise ConfigurationError(f"score pyramid has {len(scores.levels)} levels, metadata has {len(meta.scales)}")
    height, width = meta.image_size
    found = []
    for li, lv in enumerate(scores.levels):
        if lv.empty:
            continue
        if len(lv.components) != len(model.components):
            raise ConfigurationError(f"level {li} scored {len(lv.components)} components, model has {len(model.components)}")
        sel = np.isfinite(lv.combined) & (lv.combined >= score_threshold)
        for y, x in zip(*np.nonzero(sel)):
            found.append((-float(lv.combined[y, x]), li, int(y), int(x), int(lv.winner[y, x])))
    found.sort()

    dets = []
    for neg, li, y, x, c in found:
        scale = meta.scales[li]
        comp = model.components[c]
        raw = cell_box(x, y, comp.root.rows, comp.root.cols, scale, meta)
        parts, oob = [], []
        cs = scores.levels[li].components[c]
        for pi, (part, (py_grid, px_grid)) in enumerate(zip(comp.parts, cs.part_placements)):
            dx, dy = part.anchor
            qy = int(py_grid[y + dy, x + dx])
            qx = int(px_grid[y + dy, x + dx])
            pb = cell_box(qx, qy, part.filter.rows, part.filter.cols, scale, meta)
            parts.append(BBox(*pb))
            if pb[0] < 0 or pb[1] < 0 or pb[2] > width - 1 or pb[3] > height - 1:
                oob.append(pi)
        dets.append(Detection(_clip(raw, height, width), -neg, c, li, tuple(parts), tuple(oob)))
    return dets


def nms(dets, policy: NmsPolicy) -> list[Detection]:
    """Greedy suppression in descending score order (stable for equal scores)."""
    order = sorted(dets, key=lambda d: -d.score)
    kept = []
    for d in order:
        if policy.max_detections is not None and len(kept) >= policy.max_detections:
            break
        if all(policy.overlap(k.box, d.box) <= policy.threshold for k in kept):
            kept.append(d)
    return kept


def _json_number(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def detections_document(dets, model: DpmModel, policy: NmsPolicy, score_threshold: float, **header) -> dict:
    return {
        "class": model.class_name,
        "nms": {"kind": policy.kind, "threshold": policy.threshold, "max_detections": policy.max_detections},
        "score_threshold": _json_number(score_threshold),
        **header,
        "detections": [d.to_dict() for d in dets],
    }


def dumps_document(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"
