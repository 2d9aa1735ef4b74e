"""Bounding-box attention editing.

Spatial maps get ``A * W + S`` on the subject and trailing token slices,
where ``W`` is 1 inside the box and ``c_w`` outside, and ``S`` is a
``c_s``-scaled Gaussian bump inside the box. Temporal maps get the same
treatment per frame pair, with the bump scaled by ``c_m * (1 - 2d)`` for the
normalized frame distance ``d``, so nearby frames are pulled together inside
the box and distant frames pushed apart.

Token indices are 1-based everywhere in this module's public API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .geometry import BBox, bbox_pixel_region, gaussian_window

N_TOKENS = 77


class GuidanceError(ValueError):
    pass


def trailing_indices(prompt_len: int, count: int, n_tokens: int = N_TOKENS) -> set[int]:
    """The ``count`` padding positions right after the prompt, 1-based."""
    if count < 0 or prompt_len < 0:
        raise GuidanceError("prompt length and trailing count must be non-negative")
    if prompt_len + count > n_tokens:
        raise GuidanceError(
            f"{count} trailing maps after a {prompt_len}-token prompt exceed {n_tokens} tokens"
        )
    return set(range(prompt_len + 1, prompt_len + count + 1))


@dataclass
class GuidanceRegion:
    """One guided subject: per-frame boxes, token sets and editing coefficients."""

    bboxes: Sequence[BBox]
    subject_indices: Sequence[int]
    trailing: Sequence[int] = ()
    c_w: float = 0.9
    c_s: float = 0.1
    c_m: float = 0.001
    prompt_len: int | None = None
    n_tokens: int = N_TOKENS
    _fields: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.bboxes = tuple(self.bboxes)
        self.subject_indices = tuple(sorted(set(int(i) for i in self.subject_indices)))
        self.trailing = tuple(sorted(set(int(i) for i in self.trailing)))
        if len(self.bboxes) < 1:
            raise GuidanceError("region needs at least one frame")
        if not (0.0 < self.c_w <= 1.0):
            raise GuidanceError(f"c_w must lie in (0, 1], got {self.c_w}")
        if self.c_s < 0 or self.c_m < 0:
            raise GuidanceError("c_s and c_m must be non-negative")
        for i in self.subject_indices + self.trailing:
            if not 1 <= i <= self.n_tokens:
                raise GuidanceError(f"token index {i} outside [1, {self.n_tokens}]")
        if set(self.subject_indices) & set(self.trailing):
            raise GuidanceError("subject and trailing indices overlap")
        if self.prompt_len is not None:
            if any(i > self.prompt_len for i in self.subject_indices):
                raise GuidanceError(
                    f"subject indices {self.subject_indices} exceed prompt length {self.prompt_len}"
                )
            if any(i <= self.prompt_len for i in self.trailing):
                raise GuidanceError("trailing indices must lie past the prompt")

    @property
    def n_frames(self) -> int:
        return len(self.bboxes)

    @property
    def edited_tokens(self) -> tuple[int, ...]:
        return tuple(sorted(self.subject_indices + self.trailing))

    def frame_fields(self, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-frame masks and Gaussian windows flattened to ``(N_F, h*w)``."""
        key = (w, h)
        if key not in self._fields:
            masks = np.stack([bbox_pixel_region(b, w, h).mask.ravel() for b in self.bboxes])
            gauss = np.stack([gaussian_window(b, w, h).ravel() for b in self.bboxes])
            self._fields[key] = (masks, gauss)
        return self._fields[key]


@dataclass(frozen=True)
class EditSchedule:
    total_steps: int = 40
    spatial_steps: int = 5
    temporal_steps: int = 5
    composite_steps: int = 5

    def __post_init__(self):
        if self.total_steps < 1:
            raise GuidanceError("total_steps must be >= 1")
        for name in ("spatial_steps", "temporal_steps", "composite_steps"):
            v = getattr(self, name)
            if not 0 <= v <= self.total_steps:
                raise GuidanceError(f"{name} must lie in [0, {self.total_steps}], got {v}")


def _in_window(t: int, total: int, n: int) -> bool:
    # steps count down from T; the window is {T, ..., T - n}
    return t >= total - n


def should_edit_spatial(t: int, sched: EditSchedule) -> bool:
    return _in_window(t, sched.total_steps, sched.spatial_steps)


def should_edit_temporal(t: int, sched: EditSchedule) -> bool:
    return _in_window(t, sched.total_steps, sched.temporal_steps)


def spatial_weight_field(mask: np.ndarray, c_w: float) -> np.ndarray:
    return np.where(np.asarray(mask, dtype=bool), 1.0, float(c_w))


def spatial_injection_field(bbox: BBox, w: int, h: int, c_s: float) -> np.ndarray:
    return c_s * gaussian_window(bbox, w, h)


def temporal_injection_field(bboxes: BBox | Iterable[BBox], w: int, h: int,
                             c_m: float, d: float) -> np.ndarray:
    """Injection over the union of the pair's boxes, using the larger of the two windows."""
    if not 0.0 <= d <= 1.0:
        raise GuidanceError(f"normalized distance must lie in [0, 1], got {d}")
    boxes = [bboxes] if isinstance(bboxes, BBox) else list(bboxes)
    g = np.maximum.reduce([gaussian_window(b, w, h) for b in boxes])
    inside = g > 0
    return np.where(inside, (c_m * (1.0 - 2.0 * d)) * g, 0.0)


def _resolution(d_h: int, resolution: tuple[int, int] | None) -> tuple[int, int]:
    if resolution is not None:
        w, h = resolution
        if w * h != d_h:
            raise GuidanceError(f"resolution {w}x{h} does not match {d_h} pixels")
        return w, h
    side = math.isqrt(d_h)
    if side * side != d_h:
        raise GuidanceError(f"cannot infer a square resolution for {d_h} pixels")
    return side, side


def _token_array(region: GuidanceRegion, n_tok: int) -> np.ndarray:
    toks = region.edited_tokens
    bad = [i for i in toks if not 1 <= i <= n_tok]
    if bad:
        raise GuidanceError(f"token indices {bad} outside [1, {n_tok}]")
    return np.asarray(toks, dtype=np.int64) - 1


def edit_spatial_map(attn: np.ndarray, region: GuidanceRegion, frame: int | None = None,
                     resolution: tuple[int, int] | None = None) -> np.ndarray:
    """Apply the spatial edit.

    ``attn`` is either the full ``(N_F, d_h, N_P)`` map, or a single frame's
    ``(d_h, N_P)`` slice when ``frame`` is given. Returns a new array.
    """
    attn = np.asarray(attn, dtype=np.float64)
    single = frame is not None
    if single:
        if attn.ndim != 2:
            raise GuidanceError(f"single-frame map must be (d_h, N_P), got {attn.shape}")
        if not 0 <= frame < region.n_frames:
            raise GuidanceError(f"frame {frame} outside [0, {region.n_frames - 1}]")
        attn = attn[None]
    elif attn.ndim != 3 or attn.shape[0] != region.n_frames:
        raise GuidanceError(f"expected ({region.n_frames}, d_h, N_P) map, got {attn.shape}")
    w, h = _resolution(attn.shape[1], resolution)
    tokens = _token_array(region, attn.shape[2])
    masks, gauss = region.frame_fields(w, h)
    if single:
        masks, gauss = masks[frame:frame + 1], gauss[frame:frame + 1]
    weight = np.where(masks, 1.0, region.c_w)
    inject = region.c_s * gauss
    out = _kernels.spatial_edit(attn, weight, inject, tokens)
    return out[0] if single else out


def edit_temporal_map(attn: np.ndarray, region: GuidanceRegion,
                      resolution: tuple[int, int] | None = None) -> np.ndarray:
    """Apply the temporal edit to a ``(d_h, N_F, N_F)`` map. Returns a new array."""
    attn = np.asarray(attn, dtype=np.float64)
    if attn.ndim != 3 or attn.shape[1] != attn.shape[2]:
        raise GuidanceError(f"expected (d_h, N_F, N_F) map, got {attn.shape}")
    if attn.shape[1] != region.n_frames:
        raise GuidanceError(f"map has {attn.shape[1]} frames, region has {region.n_frames}")
    w, h = _resolution(attn.shape[0], resolution)
    masks, gauss = region.frame_fields(w, h)
    return _kernels.temporal_edit(attn, masks, gauss, region.c_w, region.c_m)
