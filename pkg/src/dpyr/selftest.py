"""Oracle-equivalence suites runnable from the CLI on any deployment."""

from __future__ import annotations

import contextlib
import io
import tempfile
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracle
from .core import BBox, Detection
from .detect import NmsPolicy, nms
from .dpm_cnn import geometry_by_correlation, geometry_gather, maxout_combine, score_component
from .dt_pool import Deformation1D, Deformation2D, dt1d, dt2d, injected_fault, max_filter_2d, max_pool_1d
from .features import FeaturePyramid, export_pyramid, import_pyramid
from .filter_conv import Filter, cross_correlate
from .model import load_model, save_model


@dataclass
class SuiteResult:
    name: str
    cases: int
    passed: bool
    detail: str
    seconds: float


def _dt1d_case(rng):
    n = int(rng.integers(1, 65))
    f = rng.uniform(-10, 10, n)
    d = Deformation1D(float(rng.uniform(0.01, 10)), float(rng.uniform(-5, 5)))
    fast, slow = dt1d(f, d), oracle.naive_dt1d(f, d)
    if not np.array_equal(fast.argmax, slow.argmax):
        return f"argmax differs (n={n}, a={d.a:.4g}, b={d.b:.4g})"
    err = np.abs(fast.values - slow.values).max()
    if err > 1e-9:
        return f"value error {err:.3g}"
    return None


def _dt2d_case(rng):
    g = rng.uniform(-10, 10, (int(rng.integers(1, 9)), int(rng.integers(1, 9))))
    d = Deformation2D.from_coeffs(float(rng.uniform(0.01, 10)), float(rng.uniform(-5, 5)),
                                  float(rng.uniform(0.01, 10)), float(rng.uniform(-5, 5)))
    fast, slow = dt2d(g, d), oracle.naive_dt2d(g, d)
    if not (np.array_equal(fast.argmax_y, slow.argmax_y) and np.array_equal(fast.argmax_x, slow.argmax_x)):
        return f"argmax differs on {g.shape} grid"
    err = np.abs(fast.values - slow.values).max()
    if err > 1e-9:
        return f"value error {err:.3g}"
    return None


def _max_pool_case(rng):
    f = rng.uniform(-10, 10, int(rng.integers(1, 40)))
    k = int(rng.integers(0, 8))
    if not np.array_equal(max_pool_1d(f, k), oracle.naive_max_pool_1d(f, k)):
        return f"max_pool_1d differs (n={f.size}, k={k})"
    m = oracle.random_map(rng, (int(rng.integers(1, 12)), int(rng.integers(1, 12)), int(rng.integers(1, 4))))
    if not np.array_equal(max_filter_2d(m, 1, 1).data, oracle.naive_window_max_2d(m, 1, 1)):
        return f"max_filter_2d differs on {m.shape}"
    return None


def _conv_case(rng):
    ch = int(rng.integers(1, 9))
    m = oracle.random_map(rng, (int(rng.integers(1, 17)), int(rng.integers(1, 17)), ch))
    f = Filter(rng.uniform(-1, 1, (int(rng.integers(1, m.rows + 1)), int(rng.integers(1, m.cols + 1)), ch)))
    err = np.abs(cross_correlate(m, f) - oracle.naive_response(m, f)).max()
    return f"conv error {err:.3g}" if err > 1e-9 else None


def _geometry_case(rng):
    rows, cols = int(rng.integers(2, 15)), int(rng.integers(2, 15))
    root = rng.uniform(-5, 5, (rows, cols))
    n_parts = int(rng.integers(0, 5))
    parts = [rng.uniform(-5, 5, (rows - int(rng.integers(0, 2)), cols - int(rng.integers(0, 2))))
             for _ in range(n_parts)]
    anchors = [(int(rng.integers(0, cols // 2 + 1)), int(rng.integers(0, rows // 2 + 1))) for _ in range(n_parts)]
    bias = float(rng.uniform(-1, 1))
    gathered = geometry_gather(root, parts, anchors, bias)
    dense = geometry_by_correlation(root, parts, anchors, bias)
    if dense.size == 0:
        return None
    region = gathered[:dense.shape[0], :dense.shape[1]]
    if not np.isfinite(region).all():
        return "gather undefined inside the dense-filter domain"
    err = np.abs(region - dense).max()
    return f"geometry error {err:.3g}" if err > 1e-9 else None


def _pipeline_case(rng):
    model = oracle.random_model(rng)
    ch = model.feature_spec.channels
    level = oracle.random_map(rng, (int(rng.integers(5, 21)), int(rng.integers(5, 21)), ch))
    comps, naive = [], []
    for ci, comp in enumerate(model.components):
        if comp.root.rows > level.rows or comp.root.cols > level.cols:
            continue
        fast = score_component(level, comp).scores
        slow = oracle.naive_score_map(level, comp)
        if not np.array_equal(np.isfinite(fast), np.isfinite(slow)):
            return f"component {ci}: finite domains differ"
        fin = np.isfinite(fast)
        if fin.any():
            err = np.abs(fast[fin] - slow[fin]).max()
            if err > 1e-6:
                return f"component {ci}: score error {err:.3g}"
        comps.append(fast)
        naive.append(slow)
    if comps:
        combined, winner = maxout_combine(comps)
        ref_c, ref_w = oracle.naive_maxout(comps)
        if not (np.array_equal(combined, ref_c) and np.array_equal(winner, ref_w)):
            return "maxout differs from element-wise oracle"
    return None


def _random_box(rng):
    x1, y1 = (int(v) for v in rng.integers(0, 60, 2))
    w, h = (int(v) for v in rng.integers(1, 30, 2))
    return BBox(x1, y1, x1 + w - 1, y1 + h - 1)


def _nms_case(rng):
    dets = [Detection(_random_box(rng), float(rng.uniform(-2, 2)), 0, 0) for _ in range(int(rng.integers(0, 40)))]
    for kind in ("iou", "legacy-dpm"):
        policy = NmsPolicy(kind, float(rng.uniform(0.05, 0.95)))
        kept = nms(dets, policy)
        scores = [d.score for d in kept]
        if any(s2 > s1 for s1, s2 in zip(scores, scores[1:])):
            return f"{kind}: scores not descending"
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                if policy.overlap(a.box, b.box) > policy.threshold:
                    return f"{kind}: surviving pair overlaps above threshold"
        if any(d not in dets for d in kept):
            return f"{kind}: output not a subset of input"
        if nms(kept, policy) != kept:
            return f"{kind}: not idempotent"
    return None


def _format_case(rng):
    model = oracle.random_model(rng)
    levels = [oracle.random_map(rng, (int(rng.integers(3, 8)), int(rng.integers(3, 8)), 4)) for _ in range(3)]
    pyr = FeaturePyramid(levels, [1.0, 2 ** -0.5, 0.5], 16, (1, 1))
    with tempfile.TemporaryDirectory() as tmp:
        mp, pp = Path(tmp, "m.json"), Path(tmp, "p.dpyr")
        save_model(model, mp)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            if load_model(mp) != model:
                return "model round-trip changed the model"
        export_pyramid(pyr, pp)
        if import_pyramid(pp) != pyr:
            return "pyramid round-trip changed the pyramid"
    return None


SUITES = {
    "dt1d": _dt1d_case,
    "dt2d": _dt2d_case,
    "max_pool": _max_pool_case,
    "conv": _conv_case,
    "geometry": _geometry_case,
    "pipeline": _pipeline_case,
    "nms": _nms_case,
    "formats": _format_case,
}

FAULTS = ("dt-intersection",)


def run_selftest(seed: int = 0, cases: int = 50, fault: str | None = None) -> list[SuiteResult]:
    ctx = injected_fault() if fault == "dt-intersection" else contextlib.nullcontext()
    results = []
    with ctx:
        for i, (name, case) in enumerate(SUITES.items()):
            rng = oracle.RngSpec(seed + i).generator()
            t0 = time.perf_counter()
            failure = None
            for k in range(cases):
                msg = case(rng)
                if msg:
                    failure = f"case {k}: {msg}"
                    break
            results.append(SuiteResult(name, cases, failure is None, failure or "ok", time.perf_counter() - t0))
    return results


def format_report(results) -> str:
    out = io.StringIO()
    out.write("suite\tcases\tstatus\tseconds\tdetail\n")
    for r in results:
        out.write(f"{r.name}\t{r.cases}\t{'PASS' if r.passed else 'FAIL'}\t{r.seconds:.3f}\t{r.detail}\n")
    return out.getvalue()
