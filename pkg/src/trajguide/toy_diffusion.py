"""A tiny fixed-weight latent video denoiser that hosts the guidance hooks.

The network is untrained: its weights are a pure function of a seed. It
exists so that attention edits, schedules and compositing can be run end
to end through a real reverse-diffusion loop (deterministic DDIM with
classifier-free guidance).

Layout: latents are ``(N_F, 4, 16, 16)``. The forward pass runs spatial
cross-attention at 16x16 ("down16"), average-pools to 8x8 for a second
spatial cross-attention ("mid8") and the single editable temporal
attention ("mid8.temporal"), upsamples back and finishes with a third
spatial cross-attention ("up16").
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .attention import (
    attention_output,
    spatial_cross_attention,
    spatial_to_temporal,
    temporal_attention,
    temporal_to_spatial,
)
from .guidance import (
    N_TOKENS,
    EditSchedule,
    GuidanceRegion,
    edit_spatial_map,
    edit_temporal_map,
    should_edit_spatial,
    should_edit_temporal,
)

LATENT_CHANNELS = 4
LATENT_SIZE = 16
HIDDEN = 32
ATTN_DIM = 16
TEXT_DIM = 32
TRAIN_STEPS = 1000

SPATIAL_LAYERS = {"down16": 16, "mid8": 8, "up16": 16}
TEMPORAL_LAYER = "mid8.temporal"
LAYERS = ("down16", "mid8", TEMPORAL_LAYER, "up16")

# observer(step, layer, kind, stage, attn)
Observer = Callable[[int, str, str, str, np.ndarray], None]


class NonFiniteError(RuntimeError):
    pass


class PromptError(ValueError):
    pass


def tokenize(prompt: str) -> list[str]:
    return prompt.lower().split()


@dataclass(frozen=True)
class TokenEmbedder:
    """Deterministic stand-in for a text encoder: one hashed unit vector per token."""

    salt: str = "trajguide"
    dim: int = TEXT_DIM
    n_tokens: int = N_TOKENS

    def token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(f"{self.salt}\x00{token}".encode("utf-8"), digest_size=16).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed_prompt(self, tokens: Sequence[str] | str) -> np.ndarray:
        if isinstance(tokens, str):
            tokens = tokenize(tokens)
        if len(tokens) > self.n_tokens:
            raise PromptError(f"prompt has {len(tokens)} tokens, limit is {self.n_tokens}")
        out = np.zeros((self.n_tokens, self.dim))
        for i, tok in enumerate(tokens):
            out[i] = self.token_vector(tok)
        return out


def _layernorm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5)


def _timestep_embedding(tau: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = tau * freqs
    return np.concatenate([np.sin(args), np.cos(args)])


@dataclass
class ToyDenoiser:
    seed: int = 0
    weights: dict = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        n = rng.standard_normal
        w = {
            "in": n((LATENT_CHANNELS, HIDDEN)),
            "in_b": 0.1 * n(HIDDEN),
            "time": 0.1 * n((HIDDEN, HIDDEN)),
        }
        for name in SPATIAL_LAYERS:
            w[f"{name}.q"] = n((HIDDEN, ATTN_DIM)) / np.sqrt(HIDDEN)
            w[f"{name}.k"] = 1.5 * n((TEXT_DIM, ATTN_DIM))
            w[f"{name}.k_b"] = 0.1 * n(ATTN_DIM)
            w[f"{name}.v"] = n((TEXT_DIM, HIDDEN))
            w[f"{name}.v_b"] = n(HIDDEN)
            w[f"{name}.o"] = 0.5 * n((HIDDEN, HIDDEN)) / np.sqrt(HIDDEN)
        t = TEMPORAL_LAYER
        w[f"{t}.q"] = n((HIDDEN, ATTN_DIM)) / np.sqrt(HIDDEN)
        w[f"{t}.k"] = n((HIDDEN, ATTN_DIM)) / np.sqrt(HIDDEN)
        w[f"{t}.v"] = n((HIDDEN, HIDDEN)) / np.sqrt(HIDDEN)
        w[f"{t}.o"] = 0.5 * n((HIDDEN, HIDDEN)) / np.sqrt(HIDDEN)
        w["out"] = n((HIDDEN, LATENT_CHANNELS)) / np.sqrt(HIDDEN)
        self.weights = w

    def _spatial(self, name, h, emb, step, editor, observer):
        w = self.weights
        res = SPATIAL_LAYERS[name]
        _check_finite(h, step, name)
        q = _layernorm(h) @ w[f"{name}.q"]
        k = emb @ w[f"{name}.k"] + w[f"{name}.k_b"]
        v = emb @ w[f"{name}.v"] + w[f"{name}.v_b"]
        attn = spatial_cross_attention(q, k)
        if observer is not None:
            observer(step, name, "spatial", "pre", attn)
        if editor is not None and editor.spatial:
            for region in editor.regions:
                attn = edit_spatial_map(attn, region, resolution=(res, res))
            if observer is not None:
                observer(step, name, "spatial", "post", attn)
        out = attention_output(attn, v) @ w[f"{name}.o"]
        _check_finite(out, step, name)
        return h + out

    def _temporal(self, h, step, editor, observer):
        w = self.weights
        name = TEMPORAL_LAYER
        _check_finite(h, step, name)
        hn = spatial_to_temporal(_layernorm(h))
        q = hn @ w[f"{name}.q"]
        k = hn @ w[f"{name}.k"]
        v = hn @ w[f"{name}.v"]
        attn = temporal_attention(q, k)
        if observer is not None:
            observer(step, name, "temporal", "pre", attn)
        if editor is not None and editor.temporal:
            for region in editor.regions:
                attn = edit_temporal_map(attn, region, resolution=(8, 8))
            if observer is not None:
                observer(step, name, "temporal", "post", attn)
        out = temporal_to_spatial(attention_output(attn, v)) @ w[f"{name}.o"]
        _check_finite(out, step, name)
        return h + out

    def forward(self, z: np.ndarray, tau: int, emb: np.ndarray, step: int = 0,
                editor: "StepEditor | None" = None, observer: Observer | None = None) -> np.ndarray:
        """Predict noise for latent ``z`` ``(N_F, C, 16, 16)`` given per-frame embeddings ``(N_F, N_P, d_text)``."""
        w = self.weights
        _check_finite(z, step, "input")
        n_f = z.shape[0]
        s = LATENT_SIZE
        x = z.reshape(n_f, LATENT_CHANNELS, s * s).transpose(0, 2, 1)
        h = x @ w["in"] + w["in_b"] + _timestep_embedding(tau, HIDDEN) @ w["time"]
        h = self._spatial("down16", h, emb, step, editor, observer)
        skip = h
        h8 = h.reshape(n_f, 8, 2, 8, 2, HIDDEN).mean(axis=(2, 4)).reshape(n_f, 64, HIDDEN)
        h8 = self._spatial("mid8", h8, emb, step, editor, observer)
        h8 = self._temporal(h8, step, editor, observer)
        up = h8.reshape(n_f, 8, 1, 8, 1, HIDDEN).repeat(2, axis=2).repeat(2, axis=4)
        h = skip + up.reshape(n_f, s * s, HIDDEN)
        h = self._spatial("up16", h, emb, step, editor, observer)
        eps = _layernorm(h) @ w["out"]
        _check_finite(eps, step, "out")
        return eps.transpose(0, 2, 1).reshape(z.shape)


def _check_finite(x, step, layer):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite activations at step {step}, layer {layer}")


@dataclass(frozen=True)
class StepEditor:
    regions: tuple
    spatial: bool
    temporal: bool


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 40
    cfg_scale: float = 9.0
    frames: int = 24
    seed: int = 0
    model_seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.frames < 2:
            raise ValueError("frames must be >= 2")


class DDIMSchedule:
    """Scaled-linear betas over 1000 training steps, evenly strided inference steps."""

    def __init__(self, steps: int, train_steps: int = TRAIN_STEPS):
        betas = np.linspace(0.00085 ** 0.5, 0.012 ** 0.5, train_steps) ** 2
        self.alphas_cumprod = np.cumprod(1.0 - betas)
        self.steps = steps
        self.ratio = train_steps // steps if steps <= train_steps else 1

    def timestep(self, t: int) -> int:
        """Training timestep for sampler step ``t`` in ``1..T``."""
        return min((t - 1) * self.ratio + 1, len(self.alphas_cumprod) - 1)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alphas_cumprod[self.timestep(t)])

    def step(self, z: np.ndarray, eps: np.ndarray, t: int) -> np.ndarray:
        a_t = self.alpha_bar(t)
        a_prev = self.alpha_bar(t - 1)
        x0 = (z - np.sqrt(1 - a_t) * eps) / np.sqrt(a_t)
        x0 = np.clip(x0, -1.0, 1.0)
        return np.sqrt(a_prev) * x0 + np.sqrt(1 - a_prev) * eps


def initial_noise(seed, frames: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((frames, LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE))


def guided_eps(model, z, t, cond_emb, uncond_emb, cfg_scale, schedule, editor=None, observer=None):
    """Classifier-free guided noise estimate. Only the conditional branch is edited and observed."""
    tau = schedule.timestep(t)
    eps_c = model.forward(z, tau, cond_emb, step=t, editor=editor, observer=observer)
    eps_u = model.forward(z, tau, uncond_emb, step=t)
    return eps_u + cfg_scale * (eps_c - eps_u)


def denoise_step(model, z, t, cond_emb, uncond_emb, regions: Sequence[GuidanceRegion],
                 sched: EditSchedule, cfg_scale: float, schedule: DDIMSchedule,
                 observer: Observer | None = None) -> np.ndarray:
    if t < 1:
        raise ValueError("t must be >= 1")
    editor = None
    if regions:
        editor = StepEditor(tuple(regions), should_edit_spatial(t, sched), should_edit_temporal(t, sched))
    eps = guided_eps(model, z, t, cond_emb, uncond_emb, cfg_scale, schedule, editor, observer)
    return schedule.step(z, eps, t)


def sample(model, z_init, cond_emb, uncond_emb, sampler_cfg: SamplerConfig,
           regions: Sequence[GuidanceRegion] = (), sched: EditSchedule | None = None,
           observer: Observer | None = None, step_hook=None) -> np.ndarray:
    """Run the reverse loop from ``t = T`` down to 0.

    ``step_hook(t, z)`` runs before each denoising step and returns the
    latent to denoise (it may record or replace it).
    """
    T = sampler_cfg.steps
    if sched is None:
        sched = EditSchedule(total_steps=T, spatial_steps=0, temporal_steps=0, composite_steps=0)
    if sched.total_steps != T:
        raise ValueError(f"edit schedule is for {sched.total_steps} steps, sampler runs {T}")
    schedule = DDIMSchedule(T)
    z = np.array(z_init, dtype=np.float64)
    for t in range(T, 0, -1):
        if step_hook is not None:
            z = step_hook(t, z)
        z = denoise_step(model, z, t, cond_emb, uncond_emb, regions, sched,
                         sampler_cfg.cfg_scale, schedule, observer)
    return z
