"""Tracking metrics over attention maps, attention dumps and heatmap rendering."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import BBox, bbox_pixel_region

GRID_COLUMNS = 6


class MetricsError(ValueError):
    pass


def _mass(field_: np.ndarray) -> float:
    f = np.asarray(field_, dtype=np.float64)
    if f.ndim != 2:
        raise MetricsError(f"expected an (h, w) field, got shape {f.shape}")
    if np.any(f < 0):
        raise MetricsError("field must be non-negative")
    total = float(f.sum())
    if not total > 0:
        raise MetricsError("field has zero mass")
    return total


def attention_centroid(field_: np.ndarray) -> tuple[float, float]:
    """Mass-weighted mean ``(x, y)`` in pixel coordinates."""
    total = _mass(field_)
    f = np.asarray(field_, dtype=np.float64)
    ys, xs = np.indices(f.shape)
    return float((f * xs).sum() / total), float((f * ys).sum() / total)


def mass_in_bbox(field_: np.ndarray, mask: np.ndarray) -> float:
    total = _mass(field_)
    f = np.asarray(field_, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != f.shape:
        raise MetricsError(f"mask shape {mask.shape} != field shape {f.shape}")
    return min(float(f[mask].sum()) / total, 1.0)


def argmax_location(field_: np.ndarray) -> tuple[int, int]:
    f = np.asarray(field_)
    y, x = np.unravel_index(int(np.argmax(f)), f.shape)
    return int(x), int(y)


def frame_metrics(field_: np.ndarray, bbox: BBox) -> dict:
    h, w = field_.shape
    cx, cy = attention_centroid(field_)
    bx, by = bbox.center_px(w, h)
    return {
        "bbox": list(bbox.as_tuple()),
        "centroid": [cx, cy],
        "argmax": list(argmax_location(field_)),
        "mass_in_bbox": mass_in_bbox(field_, bbox_pixel_region(bbox, w, h).mask),
        "tracking_error": math.hypot(cx - bx, cy - by),
    }


def subject_map(attn: np.ndarray, tokens: Iterable[int]) -> np.ndarray:
    """Sum of the given 1-based token slices of a ``(N_F, d_h, N_P)`` map -> ``(N_F, d_h)``."""
    idx = np.asarray(sorted(tokens), dtype=np.int64) - 1
    return attn[:, :, idx].sum(axis=2)


@dataclass(frozen=True)
class DumpSelection:
    """Which attention maps to capture. ``None`` means everything."""

    steps: frozenset | None = None
    layers: frozenset | None = None
    kinds: frozenset | None = None

    def wants(self, step: int, layer: str, kind: str) -> bool:
        return ((self.steps is None or step in self.steps)
                and (self.layers is None or layer in self.layers)
                and (self.kinds is None or kind in self.kinds))


@dataclass
class AttentionDump:
    """Captured maps keyed by ``(step, layer, kind, stage)``; stage is ``pre`` or ``post``."""

    selection: DumpSelection = field(default_factory=DumpSelection)
    records: dict = field(default_factory=dict)

    def __call__(self, step: int, layer: str, kind: str, stage: str, attn: np.ndarray) -> None:
        if not self.selection.wants(step, layer, kind):
            return
        key = (step, layer, kind, stage)
        if key in self.records:
            raise MetricsError(f"duplicate dump record {key}")
        self.records[key] = np.array(attn, copy=True)

    def keys(self) -> list:
        # steps descending, then layer/kind/stage alphabetically
        return sorted(self.records, key=lambda k: (-k[0], k[1], k[2], k[3]))

    def __getitem__(self, key):
        return self.records[key]

    def __len__(self):
        return len(self.records)


def grid_shape(n_tiles: int, columns: int = GRID_COLUMNS) -> tuple[int, int]:
    """``(cols, rows)`` for a row-major tile grid."""
    if n_tiles < 1:
        raise MetricsError("nothing to render")
    cols = min(n_tiles, columns)
    return cols, -(-n_tiles // cols)


def to_uint8(tile: np.ndarray) -> np.ndarray:
    """Min-max normalize to 0..255 with round-half-up; constant tiles become 128."""
    t = np.asarray(tile, dtype=np.float64)
    lo, hi = float(t.min()), float(t.max())
    if not hi > lo:
        return np.full(t.shape, 128, dtype=np.uint8)
    return np.floor((t - lo) / (hi - lo) * 255 + 0.5).astype(np.uint8)


def heatmap_grid(tiles: Sequence[np.ndarray], columns: int = GRID_COLUMNS) -> np.ndarray:
    """Tiles laid out row-major with a 1-pixel black gutter between them."""
    tiles = [np.asarray(t) for t in tiles]
    shapes = {t.shape for t in tiles}
    if len(shapes) != 1:
        raise MetricsError(f"tiles differ in shape: {sorted(shapes)}")
    (th, tw), = shapes
    cols, rows = grid_shape(len(tiles), columns)
    img = np.zeros((rows * th + rows - 1, cols * tw + cols - 1), dtype=np.uint8)
    for k, tile in enumerate(tiles):
        r, c = divmod(k, cols)
        y, x = r * (th + 1), c * (tw + 1)
        img[y:y + th, x:x + tw] = to_uint8(tile)
    return img


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def encode_png(img: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def render_heatmap_grid(tiles: Sequence[np.ndarray], fmt: str = "pgm") -> bytes:
    img = heatmap_grid(tiles)
    if fmt == "pgm":
        return encode_pgm(img)
    if fmt == "png":
        return encode_png(img)
    raise MetricsError(f"unknown image format {fmt!r}")


def dump_tiles(attn: np.ndarray, kind: str, tokens: Iterable[int] | None = None,
               query_frame: int = 0) -> tuple[list[np.ndarray], list[str]]:
    """Per-frame tiles from a dumped map and their labels.

    Spatial maps give one tile per frame (summed over ``tokens``); temporal
    maps give the attention from ``query_frame`` to every frame.
    """
    if kind == "spatial":
        n_f, d_h, _ = attn.shape
        side = math.isqrt(d_h)
        maps = subject_map(attn, tokens)
        return ([maps[f].reshape(side, side) for f in range(n_f)],
                [f"frame {f}" for f in range(n_f)])
    if kind == "temporal":
        d_h, n_f, _ = attn.shape
        side = math.isqrt(d_h)
        return ([attn[:, query_frame, j].reshape(side, side) for j in range(n_f)],
                [f"Attn({query_frame},{j})" for j in range(n_f)])
    raise MetricsError(f"unknown map kind {kind!r}")
