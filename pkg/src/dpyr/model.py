"""Deformable part model schema, validation and JSON (de)serialization."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dt_pool import Deformation1D, Deformation2D
from .filter_conv import Filter

FORMAT = "dpyr-model/1"
MAX_PARTS = 32
FEATURE_KINDS = ("hog31", "external")


class ModelFormatError(ValueError):
    """Model document could not be parsed; ``path`` locates the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ModelValidationError(ValueError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class RawDeformation:
    """Deformation coefficients as stored, before the a > 0 check.

    The penalty ``a*r**2 + b*r`` applies to the displacement ``r`` of the part
    placement from its anchor (right/down positive), so a positive ``b``
    penalises positive displacement. Keeping the raw numbers lets ``validate``
    report bad coefficients as data instead of failing at construction.
    """

    ax: float
    bx: float
    ay: float
    by: float

    def to_deformation(self) -> Deformation2D:
        """Penalty for the DT pass, which measures ``anchor - placement``."""
        return Deformation2D.from_coeffs(self.ax, -self.bx, self.ay, -self.by)


@dataclass(frozen=True)
class Part:
    filter: Filter
    anchor: tuple[int, int]  # (dx, dy) in cells, right/down from the root location
    deformation: RawDeformation
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class Component:
    root: Filter
    parts: tuple[Part, ...] = ()
    bias: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class FeatureSpec:
    kind: str
    channels: int
    stride: int


@dataclass(frozen=True)
class DpmModel:
    class_name: str
    feature_spec: FeatureSpec
    components: tuple[Component, ...]
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def max_root_shape(self) -> tuple[int, int]:
        return (max(c.root.rows for c in self.components),
                max(c.root.cols for c in self.components))


def validate(model: DpmModel) -> list[Violation]:
    """Return every invariant violation; an empty list means the model is ok."""
    out = []
    spec = model.feature_spec
    if spec.kind not in FEATURE_KINDS:
        out.append(Violation("feature.kind", f"unknown feature kind {spec.kind!r}"))
    if spec.channels < 1:
        out.append(Violation("feature.channels", f"must be >= 1, got {spec.channels}"))
    if spec.stride < 1:
        out.append(Violation("feature.stride", f"must be >= 1, got {spec.stride}"))
    if spec.kind == "hog31" and spec.channels != 31:
        out.append(Violation("feature.channels", f"hog31 features have 31 channels, model declares {spec.channels}"))
    if not model.components:
        out.append(Violation("components", "model has no components"))
    for ci, comp in enumerate(model.components):
        cpath = f"components[{ci}]"
        if comp.root.channels != spec.channels:
            out.append(Violation(f"{cpath}.root", f"root has {comp.root.channels} channels, feature spec has {spec.channels}"))
        if not math.isfinite(comp.bias):
            out.append(Violation(f"{cpath}.bias", "bias must be finite"))
        if len(comp.parts) > MAX_PARTS:
            out.append(Violation(f"{cpath}.parts", f"{len(comp.parts)} parts exceeds cap of {MAX_PARTS}"))
        for pi, part in enumerate(comp.parts):
            ppath = f"{cpath}.parts[{pi}]"
            if part.filter.channels != comp.root.channels:
                out.append(Violation(f"{ppath}.filter",
                                     f"part has {part.filter.channels} channels, root has {comp.root.channels}"))
            dx, dy = part.anchor
            if dx < 0:
                out.append(Violation(f"{ppath}.anchor.dx", f"anchor must be >= 0, got {dx}"))
            if dy < 0:
                out.append(Violation(f"{ppath}.anchor.dy", f"anchor must be >= 0, got {dy}"))
            d = part.deformation
            for axis, a, b in (("x", d.ax, d.bx), ("y", d.ay, d.by)):
                if not (math.isfinite(a) and a > 0):
                    out.append(Violation(f"{ppath}.deformation.{axis}.a", f"quadratic coefficient must be > 0, got {a}"))
                if not math.isfinite(b):
                    out.append(Violation(f"{ppath}.deformation.{axis}.b", "linear coefficient must be finite"))
    return out


def _filter_doc(f: Filter) -> dict:
    return {"rows": f.rows, "cols": f.cols, "channels": f.channels,
            # float32 -> float64 is exact, and repr of the double round-trips
            "weights": f.weights.astype(np.float64).ravel().tolist()}


def model_to_dict(model: DpmModel) -> dict:
    comps = []
    for comp in model.components:
        parts = []
        for part in comp.parts:
            d = part.deformation
            parts.append({
                **part.extra,
                "anchor": {"dx": part.anchor[0], "dy": part.anchor[1]},
                "deformation": {"ax": d.ax, "bx": d.bx, "ay": d.ay, "by": d.by},
                "filter": _filter_doc(part.filter),
            })
        comps.append({**comp.extra, "bias": comp.bias, "root": _filter_doc(comp.root), "parts": parts})
    spec = model.feature_spec
    return {
        **model.extra,
        "format": FORMAT,
        "class": model.class_name,
        "feature": {"kind": spec.kind, "channels": spec.channels, "stride": spec.stride},
        "components": comps,
    }


def save_model(model: DpmModel, path) -> None:
    problems = validate(model)
    if problems:
        raise ModelValidationError(problems)
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


class _Reader:
    def __init__(self):
        self.unknown = []

    def get(self, obj, key, path, kind=None):
        if not isinstance(obj, dict):
            raise ModelFormatError("expected an object", path)
        if key not in obj:
            raise ModelFormatError(f"missing field {key!r}", f"{path}.{key}" if path else key)
        value = obj[key]
        where = f"{path}.{key}" if path else key
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ModelFormatError(f"expected an integer, got {value!r}", where)
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ModelFormatError(f"expected a number, got {value!r}", where)
            value = float(value)
        elif kind is not None and not isinstance(value, kind):
            raise ModelFormatError(f"expected {kind.__name__}, got {type(value).__name__}", where)
        return value

    def extras(self, obj, known, path):
        extra = {k: v for k, v in obj.items() if k not in known}
        self.unknown.extend(f"{path}.{k}" if path else k for k in extra)
        return extra

    def filter(self, obj, path):
        rows = self.get(obj, "rows", path, int)
        cols = self.get(obj, "cols", path, int)
        channels = self.get(obj, "channels", path, int)
        weights = self.get(obj, "weights", path, list)
        if min(rows, cols, channels) < 1:
            raise ModelFormatError("filter dimensions must be positive", path)
        expected = rows * cols * channels
        if len(weights) != expected:
            raise ModelFormatError(f"expected {expected} weights, got {len(weights)}", f"{path}.weights")
        try:
            w = np.array(weights, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ModelFormatError(f"non-numeric weight ({e})", f"{path}.weights") from None
        w32 = w.astype(np.float32)
        if not np.isfinite(w32).all():
            raise ModelFormatError("weights must be finite float32 values", f"{path}.weights")
        self.extras(obj, {"rows", "cols", "channels", "weights"}, path)
        return Filter(w32.reshape(rows, cols, channels))

    def part(self, obj, path):
        anchor = self.get(obj, "anchor", path, dict)
        dx = self.get(anchor, "dx", f"{path}.anchor", int)
        dy = self.get(anchor, "dy", f"{path}.anchor", int)
        d = self.get(obj, "deformation", path, dict)
        dpath = f"{path}.deformation"
        deformation = RawDeformation(*(self.get(d, k, dpath, float) for k in ("ax", "bx", "ay", "by")))
        flt = self.filter(self.get(obj, "filter", path, dict), f"{path}.filter")
        return Part(flt, (dx, dy), deformation, self.extras(obj, {"anchor", "deformation", "filter"}, path))

    def component(self, obj, path):
        bias = self.get(obj, "bias", path, float)
        root = self.filter(self.get(obj, "root", path, dict), f"{path}.root")
        parts = tuple(self.part(p, f"{path}.parts[{i}]")
                      for i, p in enumerate(self.get(obj, "parts", path, list)))
        return Component(root, parts, bias, self.extras(obj, {"bias", "root", "parts"}, path))

    def model(self, doc):
        fmt = self.get(doc, "format", "", str)
        if fmt != FORMAT:
            raise ModelFormatError(f"unsupported format {fmt!r} (expected {FORMAT!r})", "format")
        name = self.get(doc, "class", "", str)
        feat = self.get(doc, "feature", "", dict)
        spec = FeatureSpec(self.get(feat, "kind", "feature", str),
                           self.get(feat, "channels", "feature", int),
                           self.get(feat, "stride", "feature", int))
        self.extras(feat, {"kind", "channels", "stride"}, "feature")
        comps = tuple(self.component(c, f"components[{i}]")
                      for i, c in enumerate(self.get(doc, "components", "", list)))
        extra = self.extras(doc, {"format", "class", "feature", "components"}, "")
        return DpmModel(name, spec, comps, extra)


def model_from_dict(doc: dict) -> DpmModel:
    reader = _Reader()
    model = reader.model(doc)
    if reader.unknown:
        warnings.warn(f"ignoring unknown model fields: {', '.join(reader.unknown)}", stacklevel=3)
    return model


def load_model(path) -> DpmModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{e.msg} at line {e.lineno} column {e.colno}", str(path)) from None
    return model_from_dict(doc)
