"""Command-line entry point: ``trajguide run --config cfg.json --out dir``.

Exit status is 0 on success, 1 for an invalid config and 2 for a runtime
failure. Outputs are staged in a sibling temporary directory and only moved
into place once everything has been written.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides, validate_dict
from .metrics import dump_tiles, encode_png, encode_pgm, heatmap_grid, grid_shape
from .pipeline import GenerationResult, generate, subject_region
from .toy_diffusion import tokenize

log = logging.getLogger("trajguide")


def write_latent(path: Path, latent: np.ndarray) -> None:
    """Raw little-endian float64 in C order plus a JSON sidecar with the shape."""
    arr = np.ascontiguousarray(latent, dtype="<f8")
    path.with_suffix(".f64").write_bytes(arr.tobytes(order="C"))
    sidecar = {
        "dtype": "float64",
        "byte_order": "little",
        "order": "C",
        "shape": list(arr.shape),
        "axes": ["frame", "channel", "y", "x"],
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_latent(path: Path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.with_suffix(".f64").read_bytes(), dtype="<f8")
    return data.reshape(meta["shape"])


def _run_tokens(cfg: RunConfig) -> dict[str, tuple[int, ...]]:
    if not cfg.composed:
        return {"main": subject_region(cfg.subjects[0], cfg.frames).edited_tokens}
    out = {f"subject{r}": subject_region(s, cfg.frames).edited_tokens
           for r, s in enumerate(cfg.subjects)}
    n = len(tokenize(cfg.composed_prompt))
    out["composed"] = tuple(range(1, n + 1)) if n else (1,)
    return out


def write_outputs(cfg: RunConfig, result: GenerationResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    write_latent(out / "latent", result.latent)
    for r, z in enumerate(result.subject_latents):
        write_latent(out / f"subject{r}", z)
    (out / "metrics.json").write_text(json.dumps(result.metrics, indent=2, sort_keys=True) + "\n")

    if not result.dumps:
        return
    tokens = _run_tokens(cfg)
    index = []
    for run in sorted(result.dumps):
        dump = result.dumps[run]
        run_dir = out / "attn" / run
        run_dir.mkdir(parents=True, exist_ok=True)
        for key in dump.keys():
            step, layer, kind, stage = key
            tiles, labels = dump_tiles(dump[key], kind, tokens[run])
            img = heatmap_grid(tiles)
            stem = f"step{step:03d}_{layer}_{kind}_{stage}"
            (run_dir / f"{stem}.pgm").write_bytes(encode_pgm(img))
            if cfg.emit_png:
                (run_dir / f"{stem}.png").write_bytes(encode_png(img))
            index.append({
                "file": f"attn/{run}/{stem}.pgm",
                "run": run,
                "step": step,
                "layer": layer,
                "kind": kind,
                "stage": stage,
                "grid": list(grid_shape(len(tiles))),
                "tiles": labels,
            })
    (out / "attn" / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")


OUTPUT_GLOBS = ("config.json", "metrics.json", "latent.*", "subject[0-9]*.*", "attn")


def _clear_outputs(out_dir: Path) -> None:
    # only files this tool writes; anything else in out_dir is left alone
    for pattern in OUTPUT_GLOBS:
        for p in out_dir.glob(pattern):
            if p.is_dir():
                shutil.rmtree(p)
            else:
                p.unlink()


def run(cfg: RunConfig, out_dir: Path) -> GenerationResult:
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        result = generate(cfg)
        write_outputs(cfg, result, stage)
        if out_dir.exists():
            _clear_outputs(out_dir)
            for item in sorted(stage.iterdir()):
                item.rename(out_dir / item.name)
            stage.rmdir()
        else:
            stage.rename(out_dir)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return result


def summary_lines(result: GenerationResult) -> list[str]:
    return [
        f"subject {rep['subject']}: mean tracking error {rep['mean_tracking_error']:.3f} px, "
        f"mean mass_in_bbox {rep['mean_mass_in_bbox']:.4f} at step {rep['final_edited_step']}"
        for rep in result.metrics["subjects"]
    ]


def load_config(path: Path, args: argparse.Namespace | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_bytes().decode("utf-8"))
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError([f"{path}: {e}"]) from None
    except json.JSONDecodeError as e:
        raise ConfigError([f"$: JSON syntax error at line {e.lineno} column {e.colno}: {e.msg}"]) from None
    if args is not None:
        raw = apply_overrides(
            raw, seed=args.seed, steps=args.steps, frames=args.frames, trailing=args.trailing,
            ns=args.ns, nm=args.nm, nc=args.nc, dump_attn=args.dump_attn, emit_png=args.emit_png,
        )
    return validate_dict(raw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajguide", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="generate and write latents, metrics and heatmaps")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--frames", type=int)
    r.add_argument("--trailing", type=int, help="trailing map count for every subject")
    r.add_argument("--ns", type=int, help="spatial edit steps")
    r.add_argument("--nm", type=int, help="temporal edit steps")
    r.add_argument("--nc", type=int, help="compositing steps")
    r.add_argument("--dump-attn", metavar="SPEC",
                   help="e.g. 'steps=40..36;layers=down16,mid8.temporal;kinds=spatial'")
    r.add_argument("--emit-png", action="store_true", default=None)
    r.add_argument("-v", "--verbose", action="store_true")

    v = sub.add_parser("validate", help="validate a config and print it with defaults filled")
    v.add_argument("--config", required=True, type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args if args.command == "run" else None)
    except ConfigError as e:
        print(e, file=sys.stderr)
        return 1
    if args.command == "validate":
        sys.stdout.write(cfg.to_json())
        return 0
    try:
        result = run(cfg, args.out)
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        log.debug("run failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    for line in summary_lines(result):
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
