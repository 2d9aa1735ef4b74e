"""Vectorized numpy versions of the editing and compositing kernels.

Operation order matches ``_ckernels.pyx`` exactly so both backends produce
bit-identical results.
"""

import numpy as np


def spatial_edit(attn, weight, inject, tokens):
    out = attn.copy()
    if tokens.size == 0:
        return out
    sel = attn[:, :, tokens]
    out[:, :, tokens] = sel * weight[:, :, None] + inject[:, :, None]
    return out


def temporal_edit(attn, masks, gauss, c_w, c_m):
    n_frames = masks.shape[0]
    m = masks.astype(bool)
    inside = m[:, None, :] | m[None, :, :]
    g = np.maximum(gauss[:, None, :], gauss[None, :, :])
    idx = np.arange(n_frames)
    d = np.abs(idx[:, None] - idx[None, :]) / n_frames
    coef = c_m * (1.0 - 2.0 * d)
    weight = np.where(inside, 1.0, c_w)
    inj = np.where(inside, coef[:, :, None] * g, 0.0)
    # fields are (i, j, p); maps are (p, i, j)
    return attn * weight.transpose(2, 0, 1) + inj.transpose(2, 0, 1)


def composite(z, subjects, masks, w):
    one_minus = 1.0 - w
    acc = np.zeros_like(z)
    count = masks.sum(axis=0, dtype=np.int64)
    for r in range(subjects.shape[0]):
        term = w * z + one_minus * subjects[r]
        sel = np.broadcast_to(masks[r][:, None, :].astype(bool), z.shape)
        np.add(acc, term, out=acc, where=sel)
    cover = count[:, None, :] > 0
    return np.where(cover, acc / np.maximum(count, 1)[:, None, :], z)
