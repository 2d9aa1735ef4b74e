"""Run configuration: JSON schema, semantic validation and defaults.

A config is a JSON object::

    {
      "seed": 0,
      "sampler": {"steps": 40, "cfg_scale": 9.0, "frames": 24},
      "schedule": {"spatial_steps": 5, "temporal_steps": 5, "composite_steps": 5},
      "subjects": [
        {"keyframes": {"0": {"bbox": [0.0, 0.3, 0.4, 0.7], "prompt": "a cat walking"},
                       "last": {"bbox": [0.6, 0.3, 1.0, 0.7], "prompt": "a cat walking"}},
         "subject_indices": [2], "trailing": 10, "c_w": 0.9, "c_s": 0.1, "c_m": 0.001}
      ],
      "composed_prompt": null,
      "dump": {"steps": "40..36", "layers": null, "kinds": null, "png": false}
    }

Everything except ``subjects`` is optional. See ``docs/formats.md``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any

import jsonschema

from .geometry import BBox, GeometryError
from .guidance import N_TOKENS, GuidanceRegion, trailing_indices
from .metrics import DumpSelection
from .toy_diffusion import LAYERS, tokenize

DEFAULTS = {
    "seed": 0,
    "model_seed": 0,
    "steps": 40,
    "cfg_scale": 9.0,
    "frames": 24,
    "spatial_steps": 5,
    "temporal_steps": 5,
    "composite_steps": 5,
    "trailing": 10,
    "c_w": 0.9,
    "c_s": 0.1,
    "c_m": 0.001,
}
TRAILING_SUGGESTED = (10, 20)

_num = {"type": "number"}
_nonneg_int = {"type": "integer", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["subjects"],
    "properties": {
        "seed": _nonneg_int,
        "model_seed": _nonneg_int,
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 1},
                "cfg_scale": _num,
                "frames": {"type": "integer", "minimum": 2},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "spatial_steps": _nonneg_int,
                "temporal_steps": _nonneg_int,
                "composite_steps": _nonneg_int,
            },
        },
        "subjects": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["keyframes"],
                "properties": {
                    "keyframes": {
                        "type": "object",
                        "minProperties": 2,
                        "propertyNames": {"pattern": "^([0-9]+|last)$"},
                        "additionalProperties": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["bbox", "prompt"],
                            "properties": {
                                "bbox": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                                "prompt": {"type": "string"},
                            },
                        },
                    },
                    "subject_indices": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 1},
                        "minItems": 1,
                    },
                    "trailing": _nonneg_int,
                    "c_w": _num,
                    "c_s": _num,
                    "c_m": _num,
                },
            },
        },
        "composed_prompt": {"type": ["string", "null"]},
        "dump": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": ["string", "null"]},
                "layers": {"type": ["array", "null"], "items": {"enum": list(LAYERS)}},
                "kinds": {"type": ["array", "null"], "items": {"enum": ["spatial", "temporal"]}},
                "png": {"type": "boolean"},
            },
        },
    },
}


class ConfigError(ValueError):
    """Raised with every violation found; ``errors`` holds the path-qualified messages."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  {e}" for e in self.errors))


@dataclass(frozen=True)
class Keyframe:
    frame: int
    bbox: BBox
    prompt: str


@dataclass(frozen=True)
class SubjectConfig:
    keyframes: tuple[Keyframe, ...]
    subject_indices: tuple[int, ...]
    trailing: int = DEFAULTS["trailing"]
    c_w: float = DEFAULTS["c_w"]
    c_s: float = DEFAULTS["c_s"]
    c_m: float = DEFAULTS["c_m"]

    @property
    def prompt_lengths(self) -> list[int]:
        return [len(tokenize(k.prompt)) for k in self.keyframes]

    def region(self, bboxes) -> GuidanceRegion:
        """Guidance region for an interpolated bbox schedule.

        Trailing maps start after the longest key prompt so they stay in the
        padding range at every key.
        """
        plen = max(self.prompt_lengths)
        return GuidanceRegion(
            bboxes=bboxes,
            subject_indices=self.subject_indices,
            trailing=sorted(trailing_indices(plen, self.trailing)),
            c_w=self.c_w,
            c_s=self.c_s,
            c_m=self.c_m,
        )


@dataclass(frozen=True)
class RunConfig:
    subjects: tuple[SubjectConfig, ...]
    seed: int = DEFAULTS["seed"]
    model_seed: int = DEFAULTS["model_seed"]
    steps: int = DEFAULTS["steps"]
    cfg_scale: float = DEFAULTS["cfg_scale"]
    frames: int = DEFAULTS["frames"]
    spatial_steps: int = DEFAULTS["spatial_steps"]
    temporal_steps: int = DEFAULTS["temporal_steps"]
    composite_steps: int = DEFAULTS["composite_steps"]
    composed_prompt: str | None = None
    dump_steps: str | None = None
    dump_layers: tuple[str, ...] | None = None
    dump_kinds: tuple[str, ...] | None = None
    emit_png: bool = False

    @property
    def composed(self) -> bool:
        return self.composed_prompt is not None

    def dump_selection(self) -> DumpSelection | None:
        if self.dump_steps is None:
            return None
        return DumpSelection(
            steps=frozenset(parse_steps(self.dump_steps, self)),
            layers=None if self.dump_layers is None else frozenset(self.dump_layers),
            kinds=None if self.dump_kinds is None else frozenset(self.dump_kinds),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model_seed": self.model_seed,
            "sampler": {"steps": self.steps, "cfg_scale": self.cfg_scale, "frames": self.frames},
            "schedule": {
                "spatial_steps": self.spatial_steps,
                "temporal_steps": self.temporal_steps,
                "composite_steps": self.composite_steps,
            },
            "subjects": [
                {
                    "keyframes": {
                        str(k.frame): {"bbox": list(k.bbox.as_tuple()), "prompt": k.prompt}
                        for k in s.keyframes
                    },
                    "subject_indices": list(s.subject_indices),
                    "trailing": s.trailing,
                    "c_w": s.c_w,
                    "c_s": s.c_s,
                    "c_m": s.c_m,
                }
                for s in self.subjects
            ],
            "composed_prompt": self.composed_prompt,
            "dump": {
                "steps": self.dump_steps,
                "layers": None if self.dump_layers is None else list(self.dump_layers),
                "kinds": None if self.dump_kinds is None else list(self.dump_kinds),
                "png": self.emit_png,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_steps(spec: str, cfg: RunConfig) -> set[int]:
    """``all``, ``edited``, or a comma list of ``n`` / ``a..b`` items."""
    T = cfg.steps
    spec = spec.strip()
    if spec == "all":
        return set(range(1, T + 1))
    if spec == "edited":
        n = max(cfg.spatial_steps, cfg.temporal_steps)
        return set(range(max(T - n, 1), T + 1))
    out = set()
    for item in spec.split(","):
        item = item.strip()
        if ".." in item:
            a, b = item.split("..", 1)
            lo, hi = sorted((int(a), int(b)))
            out.update(range(lo, hi + 1))
        else:
            out.add(int(item))
    bad = sorted(s for s in out if not 1 <= s <= T)
    if bad:
        raise ValueError(f"steps {bad} outside [1, {T}]")
    return out


def parse_dump_spec(spec: str) -> dict:
    """CLI form ``steps=40..36;layers=down16,mid8;kinds=spatial`` -> dump dict."""
    out: dict[str, Any] = {}
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError([f"--dump-attn: expected key=value, got {part!r}"])
        key, val = (s.strip() for s in part.split("=", 1))
        if key == "steps":
            out["steps"] = val
        elif key in ("layers", "kinds"):
            out[key] = [v.strip() for v in val.split(",") if v.strip()]
        else:
            raise ConfigError([f"--dump-attn: unknown key {key!r}"])
    return out


def _path(parts) -> str:
    s = "$"
    for p in parts:
        s += f"[{p}]" if isinstance(p, int) else f".{p}"
    return s


def _frame_index(key: str, frames: int) -> int:
    return frames - 1 if key == "last" else int(key)


def _build_subject(raw: dict, frames: int, path: str, errors: list[str]) -> SubjectConfig | None:
    n_before = len(errors)
    keys = []
    seen: dict[int, str] = {}
    for key, kf in raw["keyframes"].items():
        kpath = f"{path}.keyframes.{key}"
        f = _frame_index(key, frames)
        if not 0 <= f < frames:
            errors.append(f"{kpath}: frame {f} outside [0, {frames - 1}]")
            continue
        if f in seen:
            errors.append(f"{kpath}: duplicates keyframe {seen[f]!r} (frame {f})")
            continue
        seen[f] = key
        try:
            bbox = BBox.from_seq(kf["bbox"])
        except GeometryError as e:
            errors.append(f"{kpath}.bbox: {e}")
            continue
        ntok = len(tokenize(kf["prompt"]))
        if ntok > N_TOKENS:
            errors.append(f"{kpath}.prompt: {ntok} tokens exceed the {N_TOKENS}-token limit")
            continue
        keys.append(Keyframe(f, bbox, kf["prompt"]))
    if 0 not in seen:
        errors.append(f"{path}.keyframes: missing a keyframe at frame 0")
    if frames - 1 not in seen:
        errors.append(f"{path}.keyframes: missing a keyframe at the last frame ({frames - 1})")
    if len(errors) > n_before:
        return None
    keys.sort(key=lambda k: k.frame)
    lengths = [len(tokenize(k.prompt)) for k in keys]
    shortest, longest = min(lengths), max(lengths)
    if shortest == 0:
        errors.append(f"{path}.keyframes: every keyframe needs a non-empty prompt")
        return None
    indices = raw.get("subject_indices")
    if indices is None:
        indices = list(range(1, shortest + 1))
    bad = [i for i in indices if i > shortest]
    if bad:
        errors.append(f"{path}.subject_indices: {bad} exceed the shortest key prompt ({shortest} tokens)")
    trailing = raw.get("trailing", DEFAULTS["trailing"])
    if longest + trailing > N_TOKENS:
        errors.append(
            f"{path}.trailing: {trailing} trailing maps after a {longest}-token prompt exceed {N_TOKENS} tokens"
        )
    c_w = float(raw.get("c_w", DEFAULTS["c_w"]))
    c_s = float(raw.get("c_s", DEFAULTS["c_s"]))
    c_m = float(raw.get("c_m", DEFAULTS["c_m"]))
    if not 0.0 < c_w <= 1.0:
        errors.append(f"{path}.c_w: must lie in (0, 1], got {c_w}")
    if c_s < 0:
        errors.append(f"{path}.c_s: must be >= 0, got {c_s}")
    if c_m < 0:
        errors.append(f"{path}.c_m: must be >= 0, got {c_m}")
    if len(errors) > n_before:
        return None
    return SubjectConfig(tuple(keys), tuple(sorted(set(indices))), trailing, c_w, c_s, c_m)


def validate_dict(data: Any) -> RunConfig:
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = [f"{_path(e.absolute_path)}: {e.message}"
              for e in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))]
    if errors:
        raise ConfigError(errors)

    sampler = data.get("sampler", {})
    schedule = data.get("schedule", {})
    steps = sampler.get("steps", DEFAULTS["steps"])
    frames = sampler.get("frames", DEFAULTS["frames"])
    for name in ("spatial_steps", "temporal_steps", "composite_steps"):
        v = schedule.get(name, DEFAULTS[name])
        if v > steps:
            errors.append(f"$.schedule.{name}: {v} exceeds the {steps} sampler steps")

    subjects = []
    for r, raw in enumerate(data["subjects"]):
        s = _build_subject(raw, frames, f"$.subjects[{r}]", errors)
        if s is not None:
            subjects.append(s)

    composed = data.get("composed_prompt")
    if len(data["subjects"]) > 1 and composed is None:
        errors.append("$.composed_prompt: required when more than one subject is given")
    if composed is not None and len(tokenize(composed)) > N_TOKENS:
        errors.append(f"$.composed_prompt: exceeds the {N_TOKENS}-token limit")

    dump = data.get("dump", {})
    layers = dump.get("layers")
    kinds = dump.get("kinds")
    if errors:
        raise ConfigError(errors)

    cfg = RunConfig(
        subjects=tuple(subjects),
        seed=data.get("seed", DEFAULTS["seed"]),
        model_seed=data.get("model_seed", DEFAULTS["model_seed"]),
        steps=steps,
        cfg_scale=float(sampler.get("cfg_scale", DEFAULTS["cfg_scale"])),
        frames=frames,
        spatial_steps=schedule.get("spatial_steps", DEFAULTS["spatial_steps"]),
        temporal_steps=schedule.get("temporal_steps", DEFAULTS["temporal_steps"]),
        composite_steps=schedule.get("composite_steps", DEFAULTS["composite_steps"]),
        composed_prompt=composed,
        dump_steps=dump.get("steps"),
        dump_layers=None if layers is None else tuple(layers),
        dump_kinds=None if kinds is None else tuple(kinds),
        emit_png=dump.get("png", False),
    )
    if cfg.dump_steps is not None:
        try:
            parse_steps(cfg.dump_steps, cfg)
        except ValueError as e:
            raise ConfigError([f"$.dump.steps: {e}"]) from None
    return cfg


def parse_config(data: bytes | str) -> RunConfig:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ConfigError([f"$: not UTF-8 ({e})"]) from None
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as e:
        raise ConfigError([f"$: JSON syntax error at line {e.lineno} column {e.colno}: {e.msg}"]) from None
    return validate_dict(raw)


def apply_overrides(raw: dict, seed=None, steps=None, frames=None, trailing=None,
                    ns=None, nm=None, nc=None, dump_attn=None, emit_png=None) -> dict:
    """Return a copy of a raw config dict with CLI flag values written in."""
    raw = json.loads(json.dumps(raw))
    if not isinstance(raw, dict):
        return raw
    if seed is not None:
        raw["seed"] = seed
    for key, val in (("steps", steps), ("frames", frames)):
        if val is not None:
            raw.setdefault("sampler", {})[key] = val
    for key, val in (("spatial_steps", ns), ("temporal_steps", nm), ("composite_steps", nc)):
        if val is not None:
            raw.setdefault("schedule", {})[key] = val
    if trailing is not None:
        for s in raw.get("subjects", []):
            if isinstance(s, dict):
                s["trailing"] = trailing
    if dump_attn is not None:
        raw.setdefault("dump", {}).update(parse_dump_spec(dump_attn))
    if emit_png:
        raw.setdefault("dump", {})["png"] = True
    return raw


def with_subjects(cfg: RunConfig, **changes) -> RunConfig:
    """Copy of ``cfg`` with the same field changes applied to every subject."""
    return replace(cfg, subjects=tuple(replace(s, **changes) for s in cfg.subjects))
