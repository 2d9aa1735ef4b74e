"""End-to-end generation from a validated :class:`RunConfig`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compositing import in_compositing_window, run_composed_denoise
from .config import RunConfig, SubjectConfig
from .geometry import bbox_pixel_region, interpolate_bboxes, interpolate_embeddings
from .guidance import EditSchedule, GuidanceRegion, should_edit_spatial
from .metrics import AttentionDump, frame_metrics, mass_in_bbox, subject_map
from .toy_diffusion import (
    SPATIAL_LAYERS,
    SamplerConfig,
    TokenEmbedder,
    ToyDenoiser,
    initial_noise,
    sample,
)

REFERENCE_LAYER = "down16"


@dataclass
class GenerationResult:
    latent: np.ndarray
    metrics: dict
    dumps: dict = field(default_factory=dict)  # run name -> AttentionDump
    subject_latents: list = field(default_factory=list)


def sampler_config(cfg: RunConfig) -> SamplerConfig:
    return SamplerConfig(steps=cfg.steps, cfg_scale=cfg.cfg_scale, frames=cfg.frames,
                         seed=cfg.seed, model_seed=cfg.model_seed)


def edit_schedule(cfg: RunConfig) -> EditSchedule:
    return EditSchedule(total_steps=cfg.steps, spatial_steps=cfg.spatial_steps,
                        temporal_steps=cfg.temporal_steps, composite_steps=cfg.composite_steps)


def subject_embeddings(subject: SubjectConfig, frames: int, embedder: TokenEmbedder) -> np.ndarray:
    keys = {k.frame: embedder.embed_prompt(k.prompt) for k in subject.keyframes}
    return np.stack(interpolate_embeddings(keys, frames))


def subject_region(subject: SubjectConfig, frames: int) -> GuidanceRegion:
    bboxes = interpolate_bboxes({k.frame: k.bbox for k in subject.keyframes}, frames)
    return subject.region(bboxes)


class _Tee:
    def __init__(self, *observers):
        self.observers = [o for o in observers if o is not None]

    def __call__(self, *args):
        for o in self.observers:
            o(*args)


class _SubjectMapRecorder:
    """Keeps the summed subject+trailing slices at the reference layer for edited steps."""

    def __init__(self, region: GuidanceRegion, layer: str = REFERENCE_LAYER):
        self.region = region
        self.layer = layer
        self.maps: dict[tuple[int, str], np.ndarray] = {}

    def __call__(self, step, layer, kind, stage, attn):
        if layer == self.layer and kind == "spatial":
            self.maps[(step, stage)] = subject_map(attn, self.region.edited_tokens)


def subject_report(region: GuidanceRegion, recorder: _SubjectMapRecorder,
                   sched: EditSchedule) -> dict:
    side = SPATIAL_LAYERS[recorder.layer]
    T = sched.total_steps
    edited = [t for t in range(T, 0, -1) if should_edit_spatial(t, sched)]
    final = edited[-1]
    post = recorder.maps[(final, "post")]
    frames = []
    for f, bbox in enumerate(region.bboxes):
        entry = frame_metrics(post[f].reshape(side, side), bbox)
        entry["frame"] = f
        frames.append(entry)
    by_step = {}
    for t in edited:
        row = {}
        for stage in ("pre", "post"):
            maps = recorder.maps[(t, stage)]
            row[stage] = float(np.mean([
                mass_in_bbox(maps[f].reshape(side, side), bbox_pixel_region(b, side, side).mask)
                for f, b in enumerate(region.bboxes)
            ]))
        by_step[str(t)] = row
    return {
        "reference_layer": recorder.layer,
        "resolution": [side, side],
        "final_edited_step": final,
        "edited_tokens": list(region.edited_tokens),
        "frames": frames,
        "mean_tracking_error": float(np.mean([e["tracking_error"] for e in frames])),
        "mean_mass_in_bbox": float(np.mean([e["mass_in_bbox"] for e in frames])),
        "mass_in_bbox_by_step": by_step,
    }


def generate(cfg: RunConfig, observer=None, model: ToyDenoiser | None = None) -> GenerationResult:
    """Run the configured single-subject or composed generation.

    ``observer(step, layer, kind, stage, attn)`` sees every conditional-branch
    attention map of every pass, in execution order (subjects first).
    """
    model = model or ToyDenoiser(cfg.model_seed)
    embedder = TokenEmbedder()
    scfg = sampler_config(cfg)
    sched = edit_schedule(cfg)
    selection = cfg.dump_selection()
    empty = embedder.embed_prompt([])
    uncond = np.broadcast_to(empty, (cfg.frames,) + empty.shape)

    dumps: dict[str, AttentionDump] = {}
    reports = []
    subject_latents = []
    trajectories = []

    for r, subject in enumerate(cfg.subjects):
        name = f"subject{r}" if cfg.composed else "main"
        region = subject_region(subject, cfg.frames)
        emb = subject_embeddings(subject, cfg.frames, embedder)
        recorder = _SubjectMapRecorder(region)
        dump = None
        if selection is not None:
            dump = dumps[name] = AttentionDump(selection)
        traj: dict[int, np.ndarray] = {}

        def record(t, z, traj=traj):
            if cfg.composed and in_compositing_window(t, sched):
                traj[t] = z.copy()
            return z

        seed = (cfg.seed, r + 1) if cfg.composed else cfg.seed
        z0 = sample(model, initial_noise(seed, cfg.frames), emb, uncond, scfg,
                    regions=[region], sched=sched,
                    observer=_Tee(recorder, dump, observer), step_hook=record)
        report = subject_report(region, recorder, sched)
        report["subject"] = r
        reports.append(report)
        subject_latents.append(z0)
        trajectories.append((traj, region.bboxes))

    if not cfg.composed:
        latent = subject_latents[0]
        subject_latents = []
    else:
        emb = np.broadcast_to(embedder.embed_prompt(cfg.composed_prompt),
                              (cfg.frames, embedder.n_tokens, embedder.dim))
        dump = None
        if selection is not None:
            dump = dumps["composed"] = AttentionDump(selection)
        latent = run_composed_denoise(model, trajectories, emb, uncond, scfg, sched,
                                      initial_noise(cfg.seed, cfg.frames),
                                      observer=_Tee(dump, observer))
    metrics = {
        "mode": "composed" if cfg.composed else "single",
        "steps": cfg.steps,
        "frames": cfg.frames,
        "subjects": reports,
    }
    return GenerationResult(latent=latent, metrics=metrics, dumps=dumps,
                            subject_latents=subject_latents)
