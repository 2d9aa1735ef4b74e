"""Bounding boxes, Gaussian injection windows and keyframe interpolation.

Boxes are normalized ``(left, top, right, bottom)`` fractions of the image.
A box is rasterized at a given layer resolution by taking every pixel cell
``[x, x+1) x [y, y+1)`` that overlaps the scaled box, so a valid box always
covers at least one pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        vals = (self.left, self.top, self.right, self.bottom)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite bbox coordinate in {vals}")
        if not (0.0 <= self.left < self.right <= 1.0):
            raise GeometryError(
                f"bbox needs 0 <= left < right <= 1, got left={self.left}, right={self.right}"
            )
        if not (0.0 <= self.top < self.bottom <= 1.0):
            raise GeometryError(
                f"bbox needs 0 <= top < bottom <= 1, got top={self.top}, bottom={self.bottom}"
            )

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "BBox":
        if len(seq) != 4:
            raise GeometryError(f"bbox needs 4 values, got {len(seq)}")
        return cls(*(float(v) for v in seq))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)

    def center_px(self, w: int, h: int) -> tuple[float, float]:
        """Continuous box center in pixel coordinates (pixel ``x`` is centered at ``x``)."""
        return ((self.left + self.right) / 2 * w - 0.5, (self.top + self.bottom) / 2 * h - 0.5)


@dataclass(frozen=True)
class PixelRegion:
    """Rasterized box at one resolution. ``mask`` is indexed ``[y, x]``."""

    w: int
    h: int
    x0: int
    y0: int
    x1: int  # inclusive
    y1: int  # inclusive
    b_w: int
    b_h: int

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.h, self.w), dtype=bool)
        m[self.y0:self.y1 + 1, self.x0:self.x1 + 1] = True
        return m

    @property
    def center(self) -> tuple[int, int]:
        """Integer pixel the Gaussian window peaks on, as ``(x, y)``."""
        return ((self.x0 + self.x1) // 2, (self.y0 + self.y1) // 2)


def _span(lo: float, hi: float, n: int) -> tuple[int, int]:
    a = math.floor(lo * n)
    b = math.ceil(hi * n) - 1
    return max(a, 0), min(b, n - 1)


def bbox_pixel_region(bbox: BBox, w: int, h: int) -> PixelRegion:
    if w < 1 or h < 1:
        raise GeometryError(f"resolution must be >= 1, got {w}x{h}")
    x0, x1 = _span(bbox.left, bbox.right, w)
    y0, y1 = _span(bbox.top, bbox.bottom, h)
    # b_h uses the absolute height
    b_w = math.ceil((bbox.right - bbox.left) * w)
    b_h = math.ceil((bbox.bottom - bbox.top) * h)
    if x1 < x0 or y1 < y0 or b_w < 1 or b_h < 1:
        raise GeometryError("empty region at this resolution")
    return PixelRegion(w=w, h=h, x0=x0, y0=y0, x1=x1, y1=y1, b_w=b_w, b_h=b_h)


def gaussian_window(bbox: BBox, w: int, h: int) -> np.ndarray:
    """Separable Gaussian with sigma = half the box side, peak 1, zero outside the box."""
    reg = bbox_pixel_region(bbox, w, h)
    cx, cy = reg.center
    sx, sy = reg.b_w / 2, reg.b_h / 2
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    gx = np.exp(-((xs - cx) ** 2) / (2 * sx * sx))
    gy = np.exp(-((ys - cy) ** 2) / (2 * sy * sy))
    field = np.outer(gy, gx)
    field[~reg.mask] = 0.0
    return field


def _check_keys(frames: Sequence[int], n_frames: int) -> None:
    if len(frames) < 2:
        raise GeometryError("need at least two keyframes")
    if len(set(frames)) != len(frames):
        raise GeometryError(f"duplicate keyframe indices in {sorted(frames)}")
    fs = sorted(frames)
    if fs[0] != 0:
        raise GeometryError("first keyframe must be at frame 0")
    if fs[-1] != n_frames - 1:
        raise GeometryError(f"last keyframe must be at frame {n_frames - 1}")


def _segments(frames: Sequence[int], n_frames: int):
    """Yield ``(frame, lo_key, hi_key, a)`` for every frame; ``a`` is the in-segment parameter."""
    fs = sorted(frames)
    seg = 0
    for f in range(n_frames):
        while fs[seg + 1] < f:
            seg += 1
        fb, fe = fs[seg], fs[seg + 1]
        yield f, fb, fe, (f - fb) / (fe - fb)


def interpolate_bboxes(keys: dict[int, BBox], n_frames: int) -> list[BBox]:
    """Piecewise-linear bbox schedule. Key frames reproduce their boxes exactly."""
    _check_keys(list(keys), n_frames)
    out = []
    for f, fb, fe, a in _segments(list(keys), n_frames):
        if f in keys:
            out.append(keys[f])
            continue
        lo, hi = keys[fb].as_tuple(), keys[fe].as_tuple()
        coords = []
        for p, q in zip(lo, hi):
            v = (1 - a) * p + a * q
            coords.append(min(max(v, min(p, q)), max(p, q)))
        out.append(BBox(*coords))
    return out


def interpolate_embeddings(keys: dict[int, np.ndarray], n_frames: int) -> list[np.ndarray]:
    _check_keys(list(keys), n_frames)
    shapes = {np.shape(e) for e in keys.values()}
    if len(shapes) != 1:
        raise GeometryError(f"key embeddings differ in shape: {sorted(shapes)}")
    out = []
    for f, fb, fe, a in _segments(list(keys), n_frames):
        if f in keys:
            out.append(np.array(keys[f], dtype=np.float64))
        else:
            lo = np.asarray(keys[fb], dtype=np.float64)
            # lo + a*(hi - lo) keeps constant segments exactly constant
            out.append(lo + a * (np.asarray(keys[fe], dtype=np.float64) - lo))
    return out
