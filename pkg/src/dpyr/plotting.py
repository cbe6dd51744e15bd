"""Figures written next to the CLI's delimited output (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402


def _box_patch(box, **kw):
    return Rectangle((box.x1 - 0.5, box.y1 - 0.5), box.width, box.height, fill=False, **kw)


def render_detections(image, dets, path, title=None, dpi=100):
    """Draw kept boxes (red, with score) and their part boxes (blue, dashed)."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    fig = plt.figure(figsize=(max(w / dpi, 2), max(h / dpi, 2)), dpi=dpi)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.imshow(img, cmap="gray" if img.ndim == 2 else None, interpolation="nearest")
    for d in dets:
        for pb in d.part_boxes:
            ax.add_patch(_box_patch(pb, edgecolor="tab:blue", linestyle="--", linewidth=1))
        ax.add_patch(_box_patch(d.box, edgecolor="tab:red", linewidth=2))
        ax.text(d.box.x1, d.box.y1, f"{d.score:.2f}", color="white", fontsize=8,
                va="bottom", bbox=dict(facecolor="tab:red", edgecolor="none", pad=1))
    if title:
        ax.set_title(title)
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    ax.axis("off")
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def plot_score_pyramid(scores, path, scales=None):
    """One heatmap per non-empty level of combined (maxout) scores."""
    levels = [(i, lv) for i, lv in enumerate(scores.levels) if not lv.empty]
    n = max(len(levels), 1)
    cols = min(n, 4)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 3 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, (i, lv) in zip(axes.ravel(), levels):
        grid = np.where(np.isfinite(lv.combined), lv.combined, np.nan)
        im = ax.imshow(grid, cmap="viridis", interpolation="nearest")
        label = f"level {i}" if scales is None else f"level {i} (scale {scales[i]:.3g})"
        ax.set_title(label, fontsize=9)
        ax.axis("on")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_bench(rows, path):
    """Log-log time per call against problem size, one line per op."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for op in sorted({r["op"] for r in rows}):
        pts = sorted((r["size"], r["best_s"]) for r in rows if r["op"] == op)
        ax.loglog([p[0] for p in pts], [p[1] for p in pts], marker="o", label=op)
    ax.set_xlabel("size")
    ax.set_ylabel("best time per call (s)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
