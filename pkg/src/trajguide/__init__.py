"""Bounding-box trajectory guidance for diffusion video generation.

Keyframed boxes and prompts are interpolated over the timeline, spatial and
temporal attention maps are edited during the first denoising steps, and
several guided subjects can be composited into one scene. A small
fixed-weight latent video denoiser runs the whole thing end to end.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .compositing import composite_latents, compositing_weight
from .config import ConfigError, RunConfig, parse_config
from .geometry import (
    BBox,
    bbox_pixel_region,
    gaussian_window,
    interpolate_bboxes,
    interpolate_embeddings,
)
from .guidance import (
    EditSchedule,
    GuidanceRegion,
    edit_spatial_map,
    edit_temporal_map,
    should_edit_spatial,
    should_edit_temporal,
    trailing_indices,
)
from .pipeline import generate

__all__ = [
    "KERNEL_BACKEND",
    "BBox",
    "ConfigError",
    "EditSchedule",
    "GuidanceRegion",
    "RunConfig",
    "bbox_pixel_region",
    "composite_latents",
    "compositing_weight",
    "edit_spatial_map",
    "edit_temporal_map",
    "gaussian_window",
    "generate",
    "interpolate_bboxes",
    "interpolate_embeddings",
    "parse_config",
    "should_edit_spatial",
    "should_edit_temporal",
    "trailing_indices",
]

__version__ = "0.1.0"
