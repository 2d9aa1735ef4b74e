"""Hot kernels behind a backend switch.

The compiled Cython module is used when it imports; otherwise the numpy
fallback is used. ``TRAJGUIDE_KERNELS=python`` forces the fallback and
``TRAJGUIDE_KERNELS=compiled`` makes a missing extension an import error.
"""

import os

import numpy as np

from . import _fallback

_requested = os.environ.get("TRAJGUIDE_KERNELS", "auto").lower()
if _requested not in ("auto", "python", "compiled"):
    raise ImportError(f"TRAJGUIDE_KERNELS must be auto, python or compiled, not {_requested!r}")

_compiled = None
if _requested != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _requested == "compiled":
            raise

BACKEND = "compiled" if _compiled is not None else "python"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _u8(a):
    return np.ascontiguousarray(a, dtype=np.uint8)


def spatial_edit(attn, weight, inject, tokens, backend=None):
    """``out[f, p, i] = attn[f, p, i] * weight[f, p] + inject[f, p]`` for ``i`` in tokens (0-based)."""
    attn, weight, inject = _f64(attn), _f64(weight), _f64(inject)
    tokens = np.ascontiguousarray(tokens, dtype=np.int64)
    if (backend or BACKEND) == "compiled":
        out = np.empty_like(attn)
        _compiled.spatial_edit(attn, weight, inject, tokens, out)
        return out
    return _fallback.spatial_edit(attn, weight, inject, tokens)


def temporal_edit(attn, masks, gauss, c_w, c_m, backend=None):
    """Edit a ``(d_h, N_F, N_F)`` map with pair-union weights and distance-signed injection."""
    attn, masks, gauss = _f64(attn), _u8(masks), _f64(gauss)
    if (backend or BACKEND) == "compiled":
        out = np.empty_like(attn)
        _compiled.temporal_edit(attn, masks, gauss, float(c_w), float(c_m), out)
        return out
    return _fallback.temporal_edit(attn, masks, gauss, float(c_w), float(c_m))


def composite(z, subjects, masks, w, backend=None):
    """Blend ``(N_R, N_F, C, d_h)`` subject latents into ``z`` ``(N_F, C, d_h)`` where masks are set."""
    z, subjects, masks = _f64(z), _f64(subjects), _u8(masks)
    if (backend or BACKEND) == "compiled":
        out = np.empty_like(z)
        _compiled.composite(z, subjects, masks, float(w), out)
        return out
    return _fallback.composite(z, subjects, masks, float(w))
