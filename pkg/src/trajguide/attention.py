"""Single-head scaled dot-product attention in the layouts the editors expect.

Spatial cross-attention maps are ``(frames, pixels, tokens)``; temporal maps
are ``(pixels, frames, frames)``. Everything is float64.
"""

from __future__ import annotations

import numpy as np


class AttentionShapeError(ValueError):
    pass


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _check(name: str, arr: np.ndarray, ndim: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != ndim:
        raise AttentionShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise AttentionShapeError(f"{name} contains non-finite values")
    return arr


def scaled_attention(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """``softmax(q @ k^T / sqrt(d))`` over the last axis, batched over axis 0."""
    q = _check("Q", q, 3)
    k = _check("K", k, 3)
    if q.shape[0] != k.shape[0]:
        raise AttentionShapeError(f"batch mismatch: Q {q.shape} vs K {k.shape}")
    if q.shape[2] != k.shape[2]:
        raise AttentionShapeError(f"feature dim mismatch: Q {q.shape} vs K {k.shape}")
    d = q.shape[2]
    return softmax(np.matmul(q, k.transpose(0, 2, 1)) / np.sqrt(d), axis=-1)


def spatial_cross_attention(q_s: np.ndarray, k_s: np.ndarray) -> np.ndarray:
    """Q_s ``(N_F, d_h, d)``, K_s ``(N_F, N_P, d)`` -> ``(N_F, d_h, N_P)``."""
    return scaled_attention(q_s, k_s)


def temporal_attention(q_m: np.ndarray, k_m: np.ndarray) -> np.ndarray:
    """Q_m, K_m ``(d_h, N_F, d)`` -> ``(d_h, N_F, N_F)``."""
    q_m = np.asarray(q_m)
    k_m = np.asarray(k_m)
    if q_m.shape[:2] != k_m.shape[:2]:
        raise AttentionShapeError(f"Q_m {q_m.shape} and K_m {k_m.shape} must share (d_h, N_F)")
    return scaled_attention(q_m, k_m)


def attention_output(attn: np.ndarray, v: np.ndarray) -> np.ndarray:
    attn = np.asarray(attn, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if attn.ndim != 3 or v.ndim != 3:
        raise AttentionShapeError(f"expected 3-D tensors, got {attn.shape} and {v.shape}")
    if attn.shape[0] != v.shape[0] or attn.shape[2] != v.shape[1]:
        raise AttentionShapeError(f"cannot apply attention {attn.shape} to values {v.shape}")
    return np.matmul(attn, v)


def spatial_to_temporal(h: np.ndarray) -> np.ndarray:
    """``(N_F, d_h, c)`` -> ``(d_h, N_F, c)``: pixels move to the batch axis."""
    return np.ascontiguousarray(h.transpose(1, 0, 2))


def temporal_to_spatial(h: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(h.transpose(1, 0, 2))
