import numpy as np
import pytest

from trajguide.config import validate_dict, with_subjects
from trajguide.geometry import BBox
from trajguide.guidance import EditSchedule, GuidanceRegion
from trajguide.metrics import AttentionDump
from trajguide.pipeline import generate, subject_embeddings, subject_region
from trajguide.toy_diffusion import (
    LATENT_SIZE,
    DDIMSchedule,
    NonFiniteError,
    PromptError,
    SamplerConfig,
    TokenEmbedder,
    ToyDenoiser,
    denoise_step,
    guided_eps,
    initial_noise,
    sample,
    tokenize,
)

FRAMES = 4


@pytest.fixture(scope="module")
def model():
    return ToyDenoiser(0)


@pytest.fixture(scope="module")
def setup():
    emb = TokenEmbedder()
    cond = np.broadcast_to(emb.embed_prompt("a red fox jumping"), (FRAMES, 77, 32))
    unc = np.broadcast_to(emb.embed_prompt(""), (FRAMES, 77, 32))
    region = GuidanceRegion([BBox(0.1, 0.1, 0.5, 0.5)] * FRAMES, subject_indices=[3], trailing=range(5, 15))
    return cond, unc, region


def test_tokenize():
    assert tokenize("A  Cat\tsits") == ["a", "cat", "sits"]


def test_embed_prompt_examples():
    e = TokenEmbedder()
    assert not e.embed_prompt([]).any()
    m = e.embed_prompt(["cat", "and", "cat"])
    np.testing.assert_array_equal(m[0], m[2])
    np.testing.assert_allclose(np.linalg.norm(m[:3], axis=1), 1.0, rtol=1e-14)
    assert not m[3:].any()
    vocab = "a an the cat dog fox astronaut moon walking running on grass white yellow red".split()
    rows = np.stack([e.token_vector(t) for t in vocab])
    gram = rows @ rows.T - np.eye(len(vocab))
    assert np.abs(gram).max() < 0.99
    with pytest.raises(PromptError):
        e.embed_prompt(["x"] * 78)


def test_weights_depend_only_on_seed():
    a, b, c = ToyDenoiser(3), ToyDenoiser(3), ToyDenoiser(4)
    for k in a.weights:
        np.testing.assert_array_equal(a.weights[k], b.weights[k])
    assert not np.array_equal(a.weights["in"], c.weights["in"])


def test_ddim_schedule():
    s = DDIMSchedule(40)
    assert s.timestep(40) == 976 and s.timestep(1) == 1
    assert s.alpha_bar(0) == 1.0
    assert s.alpha_bar(40) < s.alpha_bar(20) < s.alpha_bar(1) < 1.0


def test_shapes_and_layouts(model, setup):
    cond, _, _ = setup
    dump = AttentionDump()
    eps = model.forward(initial_noise(0, FRAMES), 500, cond, step=1, observer=dump)
    assert eps.shape == (FRAMES, 4, LATENT_SIZE, LATENT_SIZE)
    assert dump[(1, "down16", "spatial", "pre")].shape == (FRAMES, 256, 77)
    assert dump[(1, "mid8", "spatial", "pre")].shape == (FRAMES, 64, 77)
    assert dump[(1, "mid8.temporal", "temporal", "pre")].shape == (64, FRAMES, FRAMES)


def test_neutral_coefficients_match_disabled(model, setup):
    cond, unc, region = setup
    neutral = GuidanceRegion(region.bboxes, region.subject_indices, region.trailing, c_w=1.0, c_s=0.0, c_m=0.0)
    sched = EditSchedule(10, 5, 5, 0)
    sch = DDIMSchedule(10)
    z = initial_noise(1, FRAMES)
    a = denoise_step(model, z, 10, cond, unc, [], sched, 9.0, sch)
    b = denoise_step(model, z, 10, cond, unc, [neutral], sched, 9.0, sch)
    np.testing.assert_array_equal(a, b)


def test_cfg_zero_is_unconditional(model, setup):
    cond, unc, _ = setup
    z = initial_noise(2, FRAMES)
    sch = DDIMSchedule(10)
    eps = guided_eps(model, z, 7, cond, unc, 0.0, sch)
    np.testing.assert_array_equal(eps, model.forward(z, sch.timestep(7), unc, step=7))


def test_cfg_affine_in_scale(model, setup):
    cond, unc, _ = setup
    z = initial_noise(3, FRAMES)
    sch = DDIMSchedule(10)
    e0, e1, e9 = (guided_eps(model, z, 5, cond, unc, s, sch) for s in (0.0, 1.0, 9.0))
    np.testing.assert_allclose(e9 - e0, 9.0 * (e1 - e0), rtol=1e-10, atol=1e-12)


def test_sample_is_deterministic(model, setup):
    cond, unc, region = setup
    cfg = SamplerConfig(steps=6, frames=FRAMES)
    sched = EditSchedule(6, 2, 2, 0)
    a = sample(model, initial_noise(4, FRAMES), cond, unc, cfg, [region], sched)
    b = sample(model, initial_noise(4, FRAMES), cond, unc, cfg, [region], sched)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.isfinite(a))


def test_non_finite_error(model, setup):
    cond, unc, _ = setup
    z = initial_noise(0, FRAMES)
    z[0, 0, 0, 0] = np.inf
    with pytest.raises(NonFiniteError, match="step 3"):
        denoise_step(model, z, 3, cond, unc, [], EditSchedule(5, 0, 0, 0), 9.0, DDIMSchedule(5))


def test_step_validation(model, setup):
    cond, unc, _ = setup
    with pytest.raises(ValueError):
        denoise_step(model, initial_noise(0, FRAMES), 0, cond, unc, [], EditSchedule(5), 9.0, DDIMSchedule(5))
    with pytest.raises(ValueError):
        SamplerConfig(frames=1)
    with pytest.raises(ValueError):
        sample(model, initial_noise(0, FRAMES), cond, unc, SamplerConfig(steps=4, frames=FRAMES),
               sched=EditSchedule(5))


def test_hook_localization(small_cfg):
    # edits only at steps in the window; pre-edit maps of the first layer at T match the baseline
    dump = AttentionDump()
    generate(small_cfg, observer=dump)
    base = AttentionDump()
    neutral = with_subjects(small_cfg, c_w=1.0, c_s=0.0, c_m=0.0)
    generate(neutral, observer=base)
    T, n_s = small_cfg.steps, small_cfg.spatial_steps
    post_steps = {k[0] for k in dump.keys() if k[3] == "post" and k[2] == "spatial"}
    assert post_steps == set(range(T - n_s, T + 1))
    np.testing.assert_array_equal(dump[(T, "down16", "spatial", "pre")], base[(T, "down16", "spatial", "pre")])
    assert not np.array_equal(dump[(T, "down16", "spatial", "post")], base[(T, "down16", "spatial", "post")])


def test_first_divergence_at_first_edited_step(small_raw):
    a = validate_dict(small_raw)
    small_raw["subjects"][0]["keyframes"]["last"]["bbox"] = [0.0, 0.0, 0.5, 0.5]
    b = validate_dict(small_raw)
    da, db = AttentionDump(), AttentionDump()
    generate(a, observer=da)
    generate(b, observer=db)
    T = a.steps
    np.testing.assert_array_equal(da[(T, "down16", "spatial", "pre")], db[(T, "down16", "spatial", "pre")])
    assert not np.array_equal(da[(T, "down16", "spatial", "post")], db[(T, "down16", "spatial", "post")])


def test_generate_defaults_smoke():
    raw = {
        "seed": 0,
        "subjects": [{
            "keyframes": {
                "0": {"bbox": [0.0, 0.3, 0.4, 0.7], "prompt": "an astronaut walking on the moon"},
                "23": {"bbox": [0.6, 0.3, 1.0, 0.7], "prompt": "an astronaut walking on the moon"},
            },
            "subject_indices": [2],
        }],
    }
    res = generate(validate_dict(raw))
    assert res.latent.shape == (24, 4, 16, 16)
    assert np.all(np.isfinite(res.latent))


def test_subject_embeddings_follow_keyframes(small_raw):
    small_raw["subjects"][0]["keyframes"]["last"]["prompt"] = "a dog walking on grass"
    cfg = validate_dict(small_raw)
    emb = subject_embeddings(cfg.subjects[0], cfg.frames, TokenEmbedder())
    e = TokenEmbedder()
    np.testing.assert_array_equal(emb[0], e.embed_prompt("a cat walking on grass"))
    np.testing.assert_array_equal(emb[-1], e.embed_prompt("a dog walking on grass"))
    assert subject_region(cfg.subjects[0], cfg.frames).n_frames == cfg.frames
