"""Multi-subject scene compositing.

Each subject is first denoised on its own with bbox guidance. A second,
composed pass then starts from its own noise and, during the first ``N_C``
steps, pulls every pixel inside a subject's box toward that subject's
latent at the same step. The pull starts at full strength (``w = 0``) and
fades linearly to nothing (``w = 1``) at ``t = T - N_C``. Where boxes
overlap, the blended values are averaged over the covering subjects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .geometry import BBox, bbox_pixel_region
from .guidance import EditSchedule


class CompositingError(ValueError):
    pass


def compositing_weight(t: int, total_steps: int, composite_steps: int) -> float:
    """Weight on the composed latent; 0 at ``t = T``, 1 at ``t = T - N_C``."""
    if composite_steps < 0:
        raise CompositingError("composite_steps must be >= 0")
    if not total_steps - composite_steps <= t <= total_steps:
        raise CompositingError(
            f"step {t} outside the compositing window [{total_steps - composite_steps}, {total_steps}]"
        )
    if composite_steps == 0:
        return 0.0  # window is just {T}
    return 1 - (composite_steps - (total_steps - t)) / composite_steps


def in_compositing_window(t: int, sched: EditSchedule) -> bool:
    return t >= sched.total_steps - sched.composite_steps


@dataclass
class SubjectLatentSet:
    """Subject latents ``(N_F, C, h, w)`` at one step with their per-frame boxes."""

    latents: Sequence[np.ndarray]
    bboxes: Sequence[Sequence[BBox]]

    def __post_init__(self):
        if len(self.latents) == 0:
            raise CompositingError("no subjects to composite")
        if len(self.latents) != len(self.bboxes):
            raise CompositingError(
                f"{len(self.latents)} latents but {len(self.bboxes)} bbox schedules"
            )
        shapes = {np.shape(z) for z in self.latents}
        if len(shapes) != 1:
            raise CompositingError(f"subject latents differ in shape: {sorted(shapes)}")
        (shape,) = shapes
        if len(shape) != 4:
            raise CompositingError(f"latents must be (N_F, C, h, w), got {shape}")
        for r, sched in enumerate(self.bboxes):
            if len(sched) != shape[0]:
                raise CompositingError(
                    f"subject {r} has {len(sched)} boxes for {shape[0]} frames"
                )

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.latents[0])

    def masks(self) -> np.ndarray:
        """``(N_R, N_F, h*w)`` box coverage at the latent resolution."""
        _, _, h, w = self.shape
        return np.stack([
            np.stack([bbox_pixel_region(b, w, h).mask.ravel() for b in sched])
            for sched in self.bboxes
        ])


def composite_latents(z: np.ndarray, subjects: SubjectLatentSet, t: int,
                      sched: EditSchedule) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != subjects.shape:
        raise CompositingError(f"latent shape {z.shape} != subject shape {subjects.shape}")
    w = compositing_weight(t, sched.total_steps, sched.composite_steps)
    n_f, c, h, wd = z.shape
    stacked = np.stack([np.asarray(s, dtype=np.float64) for s in subjects.latents])
    out = _kernels.composite(
        z.reshape(n_f, c, h * wd),
        stacked.reshape(len(subjects.latents), n_f, c, h * wd),
        subjects.masks(),
        w,
    )
    return out.reshape(z.shape)


def run_composed_denoise(model, subject_runs, composed_emb, uncond_emb, sampler_cfg,
                         sched: EditSchedule, z_init: np.ndarray, observer=None):
    """Composite precomputed subject trajectories into an unguided composed pass.

    ``subject_runs`` is a list of ``(trajectory, bboxes)`` where ``trajectory``
    maps each step ``t`` in the window to that subject's latent ``z_t``.
    Returns the final latent of the composed pass.
    """
    from .toy_diffusion import sample

    if not subject_runs:
        raise CompositingError("no subjects to composite")
    bboxes = [b for _, b in subject_runs]

    def hook(t, z):
        if not in_compositing_window(t, sched):
            return z
        latents = [traj[t] for traj, _ in subject_runs]
        return composite_latents(z, SubjectLatentSet(latents, bboxes), t, sched)

    return sample(model, z_init, composed_emb, uncond_emb, sampler_cfg,
                  observer=observer, step_hook=hook)
