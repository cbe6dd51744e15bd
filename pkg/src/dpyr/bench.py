"""Timing of the hot operations on synthetic inputs."""

from __future__ import annotations

import time

import numpy as np

from .dpm_cnn import score_component
from .dt_pool import Deformation1D, Deformation2D, dt1d, dt2d
from .filter_conv import Filter, cross_correlate
from .oracle import ModelLimits, random_map, random_model

OPS = ("dt1d", "dt2d", "conv", "pipeline")
COLUMNS = ("op", "size", "elements", "repeat", "best_s", "median_s", "ns_per_element")


def _setup(op, size, rng):
    if op == "dt1d":
        f = rng.uniform(-10, 10, size)
        d = Deformation1D(0.5, 0.3)
        return size, lambda: dt1d(f, d)
    if op == "dt2d":
        g = rng.uniform(-10, 10, (size, size))
        d = Deformation2D.from_coeffs(0.5, 0.3, 0.7, -0.2)
        return size * size, lambda: dt2d(g, d)
    if op == "conv":
        m = random_map(rng, (size, size, 32))
        f = Filter(rng.uniform(-1, 1, (6, 6, 32)))
        return size * size, lambda: cross_correlate(m, f)
    if op == "pipeline":
        model = random_model(rng, ModelLimits(components=1, parts=4, root_rows=5, root_cols=5), channels=32)
        level = random_map(rng, (size, size, 32))
        comp = model.components[0]
        return size * size, lambda: score_component(level, comp)
    raise ValueError(f"unknown op {op!r}; choose from {', '.join(OPS)}")


def run_bench(op: str, sizes, repeat: int = 3, seed: int = 0) -> list[dict]:
    if op not in OPS:
        raise ValueError(f"unknown op {op!r}; choose from {', '.join(OPS)}")
    rng = np.random.default_rng(seed)
    rows = []
    for size in sizes:
        elements, fn = _setup(op, int(size), rng)
        fn()  # warm-up (JIT compile, caches)
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        best = min(times)
        rows.append({"op": op, "size": int(size), "elements": elements, "repeat": repeat,
                     "best_s": best, "median_s": float(np.median(times)),
                     "ns_per_element": best / elements * 1e9})
    return rows


def format_table(rows, sep="\t") -> str:
    lines = [sep.join(COLUMNS)]
    for r in rows:
        lines.append(sep.join([r["op"], str(r["size"]), str(r["elements"]), str(r["repeat"]),
                               f"{r['best_s']:.6g}", f"{r['median_s']:.6g}", f"{r['ns_per_element']:.4g}"]))
    return "\n".join(lines) + "\n"
