"""Multi-scale feature pyramids: image pyramid, HOG-31 cells, padding, DPYR files."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from .core import DomainError, FeatureMap, ParameterError

log = logging.getLogger(__name__)

MAGIC = b"DPYR"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
_LEVEL = struct.Struct("<dIII")

HOG_EPS = 1e-4
HOG_CLIP = 0.2
HOG_TEXTURE = 0.2357


class PyramidFormatError(ValueError):
    """Malformed DPYR file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class PyramidConfig:
    max_dim: int = 1713
    levels: int = 7
    interval: int = 2
    pad_y: int = 0
    pad_x: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ParameterError(f"levels must be >= 1, got {self.levels}")
        if self.interval < 1:
            raise ParameterError(f"interval must be >= 1, got {self.interval}")
        if self.max_dim < 1:
            raise ParameterError(f"max_dim must be >= 1, got {self.max_dim}")
        if self.pad_y < 0 or self.pad_x < 0:
            raise ParameterError("padding must be >= 0")

    def scale(self, sigma0: float, level: int) -> float:
        # computed from sigma0 each time, never accumulated
        return sigma0 * 2.0 ** (-level / self.interval)


@dataclass(eq=False)
class FeaturePyramid:
    levels: list[FeatureMap]
    scales: list[float]
    stride: int
    pad: tuple[int, int] = (0, 0)
    source: str = "external"
    image_size: tuple[int, int] | None = None  # (height, width) of the original image

    def __post_init__(self):
        if len(self.levels) != len(self.scales):
            raise DomainError("levels and scales differ in length")
        if self.stride < 1:
            raise DomainError("stride must be >= 1")
        if any(not s2 < s1 for s1, s2 in zip(self.scales, self.scales[1:])):
            raise DomainError("scales must be strictly decreasing")

    @property
    def channels(self) -> int:
        return self.levels[0].channels if self.levels else 0

    def unpadded_shape(self, level: int) -> tuple[int, int]:
        fm = self.levels[level]
        return fm.rows - 2 * self.pad[0], fm.cols - 2 * self.pad[1]

    def total_cells(self, padded: bool = False) -> int:
        if padded:
            return sum(fm.rows * fm.cols for fm in self.levels)
        return sum(r * c for r, c in (self.unpadded_shape(i) for i in range(len(self.levels))))

    def __eq__(self, other):
        if not isinstance(other, FeaturePyramid):
            return NotImplemented
        return (self.stride == other.stride and tuple(self.pad) == tuple(other.pad)
                and self.scales == other.scales and self.levels == other.levels)

    __hash__ = None


def load_image(path) -> np.ndarray:
    """Decode any Pillow-readable raster to an 8-bit RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _as_image(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise DomainError(f"image must be non-empty HxW or HxWxC, got shape {np.shape(image)}")
    return img


def resize_bilinear(image, height: int, width: int) -> np.ndarray:
    img = _as_image(image).astype(np.float32)
    if img.shape[:2] == (height, width):
        return img.copy()
    chans = [np.asarray(Image.fromarray(np.ascontiguousarray(img[:, :, c]), mode="F")
                        .resize((width, height), Image.BILINEAR))
             for c in range(img.shape[2])]
    return np.stack(chans, axis=-1)


def build_image_pyramid(image, cfg: PyramidConfig, min_side: int = 1) -> list[tuple[np.ndarray, float]]:
    """Resized copies of ``image`` at scales ``sigma0 * 2**(-l/interval)``.

    Levels with a side shorter than ``min_side`` pixels are dropped with a warning.
    """
    img = _as_image(image)
    h, w = img.shape[:2]
    sigma0 = cfg.max_dim / max(h, w)
    out = []
    for lv in range(cfg.levels):
        sigma = cfg.scale(sigma0, lv)
        lh, lw = round_half_away(h * sigma), round_half_away(w * sigma)
        if lh < min_side or lw < min_side:
            log.warning("dropping pyramid level %d: %dx%d px is below the %d px minimum", lv, lh, lw, min_side)
            continue
        out.append((resize_bilinear(img, lh, lw), sigma))
    return out


# --- HOG-31 -----------------------------------------------------------------


class HogTerms(NamedTuple):
    hist: np.ndarray          # (by, bx, 18) sensitive orientation histograms
    energy: np.ndarray        # (by, bx) sum over o<9 of (h[o] + h[o+9])**2
    normalizers: np.ndarray   # (4, oy, ox) inverse block norms
    clipped: np.ndarray       # (4, oy, ox, 18) min(hist * n, 0.2)
    clipped_folded: np.ndarray  # (4, oy, ox, 9) min((h[o]+h[o+9]) * n, 0.2)
    features: np.ndarray      # (oy, ox, 31)


def hog_grid_shape(height: int, width: int, cell: int) -> tuple[int, int]:
    return round_half_away(height / cell) - 2, round_half_away(width / cell) - 2


def _gradients(img, vis_h, vis_w):
    h, w = img.shape[:2]
    ys = np.minimum(np.arange(1, vis_h - 1), h - 2)
    xs = np.minimum(np.arange(1, vis_w - 1), w - 2)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    dy = img[yy + 1, xx, :] - img[yy - 1, xx, :]
    dx = img[yy, xx + 1, :] - img[yy, xx - 1, :]
    v = dx * dx + dy * dy
    best = np.argmax(v, axis=-1)[..., None]  # first channel wins ties
    return (np.take_along_axis(dx, best, -1)[..., 0],
            np.take_along_axis(dy, best, -1)[..., 0],
            np.take_along_axis(v, best, -1)[..., 0])


def hog31_terms(image, cell: int = 8) -> HogTerms:
    """HOG-31 features plus the intermediate quantities they are built from."""
    img = _as_image(image).astype(np.float64)
    h, w = img.shape[:2]
    if cell < 1:
        raise ParameterError("cell size must be >= 1")
    if h < 3 * cell or w < 3 * cell:
        raise DomainError(f"image {h}x{w} too small for cell {cell}: need at least {3 * cell}x{3 * cell} pixels")
    by, bx = round_half_away(h / cell), round_half_away(w / cell)
    vis_h, vis_w = by * cell, bx * cell

    dx, dy, v = _gradients(img, vis_h, vis_w)
    mag = np.sqrt(v)
    theta = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    t = theta / (2 * np.pi / 18)
    o0 = np.floor(t)
    ofrac = t - o0
    o0 = o0.astype(np.int64) % 18
    o1 = (o0 + 1) % 18

    ys = np.arange(1, vis_h - 1)
    xs = np.arange(1, vis_w - 1)
    yp = (ys + 0.5) / cell - 0.5
    xp = (xs + 0.5) / cell - 0.5
    iy = np.floor(yp).astype(np.int64)
    ix = np.floor(xp).astype(np.int64)
    wy0 = yp - iy  # weight of the lower-right neighbour
    wx0 = xp - ix

    hist = np.zeros(by * bx * 18)
    for cy, wy in ((iy, 1 - wy0), (iy + 1, wy0)):
        for cx, wx in ((ix, 1 - wx0), (ix + 1, wx0)):
            ok = ((cy >= 0) & (cy < by))[:, None] & ((cx >= 0) & (cx < bx))[None, :]
            base = (cy[:, None] * bx + cx[None, :]) * 18
            sw = wy[:, None] * wx[None, :] * mag
            for o, ow in ((o0, 1 - ofrac), (o1, ofrac)):
                hist += np.bincount((base + o)[ok], weights=(sw * ow)[ok], minlength=hist.size)
    hist = hist.reshape(by, bx, 18)

    folded = hist[..., :9] + hist[..., 9:]
    energy = np.sum(folded * folded, axis=-1)
    oy, ox = by - 2, bx - 2

    def block(r, c):
        e = energy
        return e[r:r + oy, c:c + ox] + e[r + 1:r + 1 + oy, c:c + ox] + e[r:r + oy, c + 1:c + 1 + ox] + e[r + 1:r + 1 + oy, c + 1:c + 1 + ox]

    normalizers = np.stack([1.0 / np.sqrt(block(r, c) + HOG_EPS)
                            for r, c in ((1, 1), (0, 1), (1, 0), (0, 0))])
    center = hist[1:-1, 1:-1]
    center_folded = folded[1:-1, 1:-1]
    clipped = np.minimum(center[None] * normalizers[..., None], HOG_CLIP)
    clipped_folded = np.minimum(center_folded[None] * normalizers[..., None], HOG_CLIP)

    feats = np.concatenate([
        0.25 * clipped.sum(axis=0),
        0.25 * clipped_folded.sum(axis=0),
        HOG_TEXTURE * np.moveaxis(clipped.sum(axis=-1), 0, -1),
    ], axis=-1)
    return HogTerms(hist, energy, normalizers, clipped, clipped_folded, feats)


def hog31(image, cell: int = 8) -> FeatureMap:
    return FeatureMap(hog31_terms(image, cell).features.astype(np.float32))


# --- extractors ---------------------------------------------------------------


@dataclass(frozen=True)
class Hog31Extractor:
    cell: int = 8
    kind: str = field(default="hog31", init=False)

    @property
    def stride(self) -> int:
        return self.cell

    @property
    def channels(self) -> int:
        return 31

    @property
    def min_side(self) -> int:
        return 3 * self.cell

    def __call__(self, image) -> FeatureMap:
        return hog31(image, self.cell)


@dataclass(frozen=True)
class CellMeanExtractor:
    """Stand-in for an external front-end: mean colour of each ``stride`` x ``stride`` cell.

    Produces ``ceil(h/stride) x ceil(w/stride)`` cells; partial border cells
    average the pixels they contain.
    """

    stride: int = 16
    kind: str = field(default="external", init=False)

    @property
    def channels(self) -> int:
        return 3

    @property
    def min_side(self) -> int:
        return 1

    def __call__(self, image) -> FeatureMap:
        img = _as_image(image).astype(np.float64)
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        img = img[:, :, :3]
        h, w = img.shape[:2]
        s = self.stride
        rows, cols = -(-h // s), -(-w // s)
        padded = np.zeros((rows * s, cols * s, 3))
        padded[:h, :w] = img
        counts = np.zeros((rows * s, cols * s))
        counts[:h, :w] = 1
        sums = padded.reshape(rows, s, cols, s, 3).sum(axis=(1, 3))
        n = counts.reshape(rows, s, cols, s).sum(axis=(1, 3))
        return FeatureMap((sums / n[..., None] / 255.0).astype(np.float32))


def pad_level(fm: FeatureMap, pad_y: int, pad_x: int) -> FeatureMap:
    if pad_y == 0 and pad_x == 0:
        return fm
    return FeatureMap(np.pad(fm.data, ((pad_y, pad_y), (pad_x, pad_x), (0, 0))))


def build_feature_pyramid(image, cfg: PyramidConfig, extractor) -> FeaturePyramid:
    img = _as_image(image)
    levels, scales = [], []
    for scaled, sigma in build_image_pyramid(img, cfg, min_side=extractor.min_side):
        levels.append(pad_level(extractor(scaled), cfg.pad_y, cfg.pad_x))
        scales.append(sigma)
    return FeaturePyramid(levels, scales, extractor.stride, (cfg.pad_y, cfg.pad_x),
                          extractor.kind, image_size=img.shape[:2])


# --- DPYR binary format ---------------------------------------------------------


def export_pyramid(pyr: FeaturePyramid, path) -> None:
    chunks = [_HEADER.pack(MAGIC, VERSION, pyr.stride, pyr.pad[0], pyr.pad[1], len(pyr.levels))]
    for fm, sigma in zip(pyr.levels, pyr.scales):
        chunks.append(_LEVEL.pack(float(sigma), fm.rows, fm.cols, fm.channels))
        chunks.append(fm.data.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_pyramid(buf: bytes) -> FeaturePyramid:
    if len(buf) < _HEADER.size:
        if not MAGIC.startswith(buf[:4]):
            raise PyramidFormatError("bad magic", 0)
        raise PyramidFormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", len(buf))
    magic, version, stride, pad_y, pad_x, n = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise PyramidFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise PyramidFormatError(f"unsupported version {version}", 4)
    if stride < 1:
        raise PyramidFormatError("stride must be >= 1", 8)
    off = _HEADER.size
    levels, scales = [], []
    channels = None
    for lv in range(n):
        if off + _LEVEL.size > len(buf):
            raise PyramidFormatError(f"truncated header for level {lv}", off)
        sigma, rows, cols, ch = _LEVEL.unpack_from(buf, off)
        if not (math.isfinite(sigma) and sigma > 0):
            raise PyramidFormatError(f"level {lv}: invalid scale {sigma}", off)
        if scales and not sigma < scales[-1]:
            raise PyramidFormatError(f"non-monotone scales: level {lv} scale {sigma} >= {scales[-1]}", off)
        if min(rows, cols, ch) < 1:
            raise PyramidFormatError(f"level {lv}: empty dimensions {rows}x{cols}x{ch}", off + 8)
        if rows < 2 * pad_y or cols < 2 * pad_x:
            raise PyramidFormatError(f"level {lv}: {rows}x{cols} cells cannot hold padding {pad_y},{pad_x}", off + 8)
        if channels is not None and ch != channels:
            raise PyramidFormatError(f"level {lv}: {ch} channels, level 0 has {channels}", off + 16)
        channels = ch
        off += _LEVEL.size
        nbytes = rows * cols * ch * 4
        if off + nbytes > len(buf):
            raise PyramidFormatError(
                f"truncated data for level {lv}: header promises {nbytes} bytes, {len(buf) - off} remain", off)
        data = np.frombuffer(buf, dtype="<f4", count=rows * cols * ch, offset=off).reshape(rows, cols, ch)
        if not np.isfinite(data).all():
            raise PyramidFormatError(f"level {lv}: non-finite feature values", off)
        levels.append(FeatureMap(data.astype(np.float32)))
        scales.append(sigma)
        off += nbytes
    if off != len(buf):
        raise PyramidFormatError(f"{len(buf) - off} trailing bytes after last level", off)
    image_size = None
    if levels:
        r0, c0 = levels[0].rows - 2 * pad_y, levels[0].cols - 2 * pad_x
        image_size = (max(1, round_half_away(r0 * stride / scales[0])),
                      max(1, round_half_away(c0 * stride / scales[0])))
    return FeaturePyramid(levels, scales, stride, (pad_y, pad_x), "external", image_size)


def import_pyramid(path) -> FeaturePyramid:
    return read_pyramid(Path(path).read_bytes())


def is_pyramid_file(path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == MAGIC
    except OSError:
        return False
