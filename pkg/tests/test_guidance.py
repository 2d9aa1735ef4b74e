import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajguide.geometry import BBox, bbox_pixel_region, gaussian_window
from trajguide.guidance import (
    EditSchedule,
    GuidanceError,
    GuidanceRegion,
    edit_spatial_map,
    edit_temporal_map,
    should_edit_spatial,
    should_edit_temporal,
    spatial_injection_field,
    spatial_weight_field,
    temporal_injection_field,
    trailing_indices,
)

W = H = 8
BOX = BBox(0.25, 0.25, 0.75, 0.75)


def region(bboxes=None, n_frames=3, **kw):
    kw.setdefault("subject_indices", [2])
    kw.setdefault("trailing", [5, 6])
    return GuidanceRegion(bboxes=bboxes or [BOX] * n_frames, **kw)


def random_spatial(rng, n_frames=3, n_tok=8):
    logits = rng.standard_normal((n_frames, W * H, n_tok))
    e = np.exp(logits)
    return e / e.sum(-1, keepdims=True)


def loop_spatial_oracle(attn, bboxes, tokens, c_w, c_s):
    """Per-pixel loop straight from the definition, with 1-based token ids."""
    out = attn.copy()
    for f, b in enumerate(bboxes):
        reg = bbox_pixel_region(b, W, H)
        g = gaussian_window(b, W, H)
        for y in range(H):
            for x in range(W):
                inside = reg.x0 <= x <= reg.x1 and reg.y0 <= y <= reg.y1
                for i in tokens:
                    v = attn[f, y * W + x, i - 1]
                    out[f, y * W + x, i - 1] = v * 1.0 + c_s * g[y, x] if inside else v * c_w
    return out


def loop_temporal_oracle(attn, bboxes, c_w, c_m):
    n_f = len(bboxes)
    regs = [bbox_pixel_region(b, W, H) for b in bboxes]
    gs = [gaussian_window(b, W, H) for b in bboxes]
    out = attn.copy()
    for i in range(n_f):
        for j in range(n_f):
            d = abs(i - j) / n_f
            for y in range(H):
                for x in range(W):
                    inside = any(r.x0 <= x <= r.x1 and r.y0 <= y <= r.y1 for r in (regs[i], regs[j]))
                    p = y * W + x
                    if inside:
                        out[p, i, j] = attn[p, i, j] + c_m * (1 - 2 * d) * max(gs[i][y, x], gs[j][y, x])
                    else:
                        out[p, i, j] = attn[p, i, j] * c_w
    return out


def test_trailing_indices():
    assert trailing_indices(6, 0) == set()
    assert trailing_indices(6, 3, 77) == {7, 8, 9}
    with pytest.raises(GuidanceError):
        trailing_indices(70, 10, 77)


def test_region_validation():
    with pytest.raises(GuidanceError):
        region(c_w=0.0)
    with pytest.raises(GuidanceError):
        region(c_w=1.5)
    with pytest.raises(GuidanceError):
        region(c_s=-0.1)
    with pytest.raises(GuidanceError):
        region(subject_indices=[2], trailing=[2, 3])
    with pytest.raises(GuidanceError):
        region(subject_indices=[78])
    with pytest.raises(GuidanceError):
        region(subject_indices=[2], trailing=[3], prompt_len=4)


def test_weight_field_examples():
    np.testing.assert_array_equal(spatial_weight_field(np.zeros((4, 4), bool), 1.0), np.ones((4, 4)))
    full = bbox_pixel_region(BBox(0, 0, 1, 1), 4, 4).mask
    np.testing.assert_array_equal(spatial_weight_field(full, 0.9), np.ones((4, 4)))
    m = np.array([[True, False], [False, False]])
    np.testing.assert_array_equal(spatial_weight_field(m, 0.5), [[1, 0.5], [0.5, 0.5]])


def test_injection_field_examples():
    assert not spatial_injection_field(BOX, W, H, 0.0).any()
    s = spatial_injection_field(BOX, W, H, 0.1)
    cx, cy = bbox_pixel_region(BOX, W, H).center
    assert s[cy, cx] == pytest.approx(0.1, abs=1e-15)
    assert not s[~bbox_pixel_region(BOX, W, H).mask].any()


def test_edit_spatial_examples():
    rng = np.random.default_rng(0)
    a = random_spatial(rng)
    np.testing.assert_array_equal(edit_spatial_map(a, region(c_w=1.0, c_s=0.0)), a)

    reg = region()
    cx, cy = bbox_pixel_region(BOX, W, H).center
    a = np.full((3, W * H, 8), 0.5)
    a[:, cy * W + cx, 1] = 0.2
    out = edit_spatial_map(a, reg)
    assert out[0, cy * W + cx, 1] == pytest.approx(0.3, abs=1e-15)
    assert out[0, 0, 1] == pytest.approx(0.45, abs=1e-15)
    np.testing.assert_array_equal(out[:, :, [0, 2, 3, 6, 7]], a[:, :, [0, 2, 3, 6, 7]])


def test_edit_spatial_single_frame_slice():
    rng = np.random.default_rng(1)
    boxes = [BBox(0, 0, 0.5, 0.5), BBox(0.25, 0.25, 0.75, 0.75), BBox(0.5, 0.5, 1, 1)]
    reg = region(bboxes=boxes)
    a = random_spatial(rng)
    full = edit_spatial_map(a, reg)
    for f in range(3):
        np.testing.assert_array_equal(edit_spatial_map(a[f], reg, frame=f), full[f])
    with pytest.raises(GuidanceError):
        edit_spatial_map(a[0], reg, frame=3)


def test_edit_spatial_token_out_of_range():
    with pytest.raises(GuidanceError):
        edit_spatial_map(np.full((3, W * H, 4), 0.25), region())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0), st.floats(0.0, 0.5))
def test_edit_spatial_matches_loop_oracle(seed, c_w, c_s):
    rng = np.random.default_rng(seed)
    boxes = []
    for _ in range(3):
        l, r = sorted(rng.uniform(0, 1, 2))
        t, b = sorted(rng.uniform(0, 1, 2))
        boxes.append(BBox(l, t, max(r, l + 1e-3), max(b, t + 1e-3)))
    reg = region(bboxes=boxes, c_w=c_w, c_s=c_s)
    a = random_spatial(rng)
    expected = loop_spatial_oracle(a, boxes, reg.edited_tokens, c_w, c_s)
    np.testing.assert_allclose(edit_spatial_map(a, reg), expected, rtol=1e-15, atol=0)


def test_temporal_injection_examples():
    g = gaussian_window(BOX, W, H)
    np.testing.assert_array_equal(temporal_injection_field(BOX, W, H, 0.001, 0.0), 0.001 * g)
    assert not temporal_injection_field(BOX, W, H, 0.001, 0.5).any()
    s = temporal_injection_field(BOX, W, H, 0.001, 23 / 24)
    cx, cy = bbox_pixel_region(BOX, W, H).center
    assert s[cy, cx] == pytest.approx(0.001 * (1 - 46 / 24), rel=1e-14)
    assert s[cy, cx] == pytest.approx(-0.9167e-3, abs=1e-7)
    with pytest.raises(GuidanceError):
        temporal_injection_field(BOX, W, H, 0.001, 1.5)


def test_temporal_injection_pair_union():
    a, b = BBox(0, 0, 0.25, 0.25), BBox(0.75, 0.75, 1, 1)
    s = temporal_injection_field([a, b], W, H, 1.0, 0.0)
    np.testing.assert_array_equal(s > 0, bbox_pixel_region(a, W, H).mask | bbox_pixel_region(b, W, H).mask)


def test_edit_temporal_examples():
    rng = np.random.default_rng(3)
    a = rng.random((W * H, 4, 4))
    np.testing.assert_array_equal(edit_temporal_map(a, region(n_frames=4, c_w=1.0, c_m=0.0)), a)

    reg = region(n_frames=4, c_m=0.001)
    out = edit_temporal_map(a, reg)
    cx, cy = bbox_pixel_region(BOX, W, H).center
    p = cy * W + cx
    assert out[p, 1, 1] == pytest.approx(a[p, 1, 1] + 0.001, rel=1e-14)
    # static box, pair (0, N_F/2): attenuation outside, no injection inside
    np.testing.assert_array_equal(out[p, 0, 2], a[p, 0, 2])
    assert out[0, 0, 2] == pytest.approx(0.9 * a[0, 0, 2], rel=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_edit_temporal_matches_loop_oracle(seed, n_f):
    rng = np.random.default_rng(seed)
    boxes = [BBox(*(lambda l, t: (l, t, l + 0.4, t + 0.4))(*rng.uniform(0, 0.6, 2))) for _ in range(n_f)]
    reg = region(bboxes=boxes, c_w=0.8, c_m=0.05)
    a = rng.random((W * H, n_f, n_f))
    np.testing.assert_allclose(edit_temporal_map(a, reg), loop_temporal_oracle(a, boxes, 0.8, 0.05),
                               rtol=1e-15, atol=1e-18)


def test_schedule_examples():
    s = EditSchedule(40, 5, 5, 5)
    assert should_edit_spatial(40, s)
    assert should_edit_spatial(35, s)
    assert not should_edit_spatial(34, s)
    assert should_edit_temporal(35, s) and not should_edit_temporal(34, s)
    z = EditSchedule(40, 0, 0, 0)
    assert should_edit_spatial(40, z)
    assert not any(should_edit_spatial(t, z) for t in range(1, 40))
    with pytest.raises(GuidanceError):
        EditSchedule(40, 41, 5, 5)


# properties


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_selectivity(seed):
    rng = np.random.default_rng(seed)
    a = random_spatial(rng)
    out = edit_spatial_map(a, region(c_w=1.0, c_s=0.3))
    untouched = [i for i in range(8) if i + 1 not in (2, 5, 6)]
    np.testing.assert_array_equal(out[:, :, untouched], a[:, :, untouched])
    outside = ~bbox_pixel_region(BOX, W, H).mask.ravel()
    np.testing.assert_array_equal(out[:, outside], a[:, outside])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_forced_argmax(seed, c_w):
    rng = np.random.default_rng(seed)
    a = random_spatial(rng, n_frames=1)
    c_s = c_w * a[0, :, 1].max() * 1.01 + 1e-9
    l, t = rng.uniform(0, 0.8, 2)
    box = BBox(l, t, l + 0.2, t + 0.2)
    out = edit_spatial_map(a, region(bboxes=[box], c_w=c_w, c_s=c_s))
    p = int(np.argmax(out[0, :, 1]))
    assert bbox_pixel_region(box, W, H).mask.ravel()[p]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.99), st.floats(1e-4, 1.0))
def test_mass_monotonicity(seed, c_w, c_s):
    rng = np.random.default_rng(seed)
    a = random_spatial(rng, n_frames=1)
    inside = bbox_pixel_region(BOX, W, H).mask.ravel()
    out = edit_spatial_map(a, region(n_frames=1, c_w=c_w, c_s=c_s))
    frac = lambda s: s[inside].sum() / s.sum()  # noqa: E731
    assert frac(out[0, :, 1]) > frac(a[0, :, 1])


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_temporal_sign_structure(d1, d2):
    cx, cy = bbox_pixel_region(BOX, W, H).center
    v = lambda d: temporal_injection_field(BOX, W, H, 0.01, d)[cy, cx]  # noqa: E731
    if d1 < d2:
        assert v(d1) >= v(d2)
        if d2 - d1 > 1e-9:  # strict once the gap is above rounding
            assert v(d1) > v(d2)
    assert math.copysign(1, v(d1)) == (1 if d1 <= 0.5 else -1) or v(d1) == 0
    assert v(0.5) == 0.0


def test_no_renormalization():
    a = random_spatial(np.random.default_rng(9))
    out = edit_spatial_map(a, region())
    assert not np.allclose(out.sum(-1), 1.0)
