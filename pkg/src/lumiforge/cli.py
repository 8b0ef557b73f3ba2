"""``lumiforge`` command line.

Every subcommand takes ``--config run.json`` (all keys optional, unknown keys
rejected). Failures print one JSON object to stderr and exit nonzero:
2 for configuration errors, 3 for missing inputs, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("lumiforge")

EXIT_CONFIG = 2
EXIT_MISSING = 3


class CliError(RuntimeError):
    def __init__(self, message: str, code: int = 1, **detail):
        super().__init__(message)
        self.code = code
        self.detail = detail


def _emit_error(kind: str, message: str, **detail) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **detail}, sort_keys=True) + "\n")


def _set_seeds(seed: int) -> None:
    import torch

    torch.manual_seed(seed)


# -- subcommands -------------------------------------------------------------------

def cmd_generate_dataset(cfg: RunConfig, args) -> dict:
    from .pipeline import stage_dataset

    m = stage_dataset(cfg)
    return {"manifest": str(cfg.dataset_dir / "manifest.json"), "samples": len(m.samples)}


def cmd_train_codec(cfg: RunConfig, args) -> dict:
    from .pipeline import stage_codec

    stage_codec(cfg)
    return {"checkpoint": str(cfg.codec_path)}


def cmd_train_backbone(cfg: RunConfig, args) -> dict:
    from .pipeline import stage_backbone

    stage_backbone(cfg)
    return {"checkpoint": str(cfg.backbone_path)}


def cmd_train(cfg: RunConfig, args) -> dict:
    from .pipeline import stage_light

    light = cfg.light.model_copy(update={
        k: v for k, v in {
            "enable_dis_loss": False if args.no_dis_loss else None,
            "enable_caption_aug": False if args.no_caption_aug else None,
            "steps": args.steps,
        }.items() if v is not None
    })
    cfg = cfg.model_copy(update={"light": light})
    out = Path(args.out) if args.out else cfg.light_path
    stage_light(cfg, out)
    return {"checkpoint": str(out), "loss_log": str(out.with_suffix(".losses.csv")),
            "enable_dis_loss": light.enable_dis_loss, "enable_caption_aug": light.enable_caption_aug}


def _trajectory_for(cfg: RunConfig, spec: str):
    from .grid import load_trajectory

    p = Path(spec)
    if p.exists():
        traj = load_trajectory(p)
    else:
        try:
            idx = int(spec)
        except ValueError:
            raise CliError(f"trajectory {spec!r} is neither a file nor an index", EXIT_MISSING) from None
        from .config import build_trajectory

        if not 0 <= idx < len(cfg.dataset.trajectories):
            raise CliError(f"trajectory index {idx} out of range", EXIT_CONFIG,
                           path="dataset.trajectories")
        traj = build_trajectory(cfg.dataset.trajectories[idx], cfg.grid.build(), cfg.dataset.frames_per_video)
    return traj.resample(cfg.dataset.frames_per_video)


def cmd_sample(cfg: RunConfig, args) -> dict:
    from .canvas import CanvasGeometry, render_canvas_sequence
    from .pipeline import Pipeline
    from .render import save_frames, to_uint8

    traj = _trajectory_for(cfg, args.trajectory)
    n, res = cfg.dataset.frames_per_video, cfg.dataset.resolution
    scfg = cfg.sample.sample_config(cfg.seed if args.seed is None else args.seed, n, res,
                                    light_scale=args.light_scale, T_infer=args.steps, w=args.w)
    pipe = Pipeline.from_config(cfg, args.light)
    canvases = render_canvas_sequence(traj, CanvasGeometry.for_resolution(res), trajectory_ref=args.trajectory)
    video = pipe.generate(args.caption, canvases, scfg)
    out = Path(args.out)
    meta = {"caption": args.caption, "trajectory": args.trajectory, "seed": scfg.seed,
            "light_scale": scfg.light_scale, "T_infer": scfg.T_infer, "w": scfg.w}
    save_frames(video, out, metadata=meta)
    result = {"frames": str(out), "n_frames": len(video)}
    if args.strip:
        from PIL import Image

        Image.fromarray(to_uint8(np.concatenate(list(video.frames), axis=1))).save(args.strip)
        result["strip"] = args.strip
    return result


def cmd_evaluate(cfg: RunConfig, args) -> dict:
    from . import metrics
    from .render import load_frames

    for p in (args.video, args.reference):
        if not Path(p).is_dir():
            raise CliError(f"{p} is not a frame directory", EXIT_MISSING)
    video = load_frames(args.video)
    ref = load_frames(args.reference)
    canv = None
    if args.reference_canvases:
        canv = load_frames(args.reference_canvases, prefix="canvas").frames
    image_embed = text_embed = None
    if args.caption:
        from .pipeline import Pipeline

        pipe = Pipeline.from_config(cfg, with_light=False)
        if pipe.codec.clip_proj.numel():
            image_embed, text_embed = pipe.image_embed, pipe.text_embed
    report = metrics.evaluate_video(video, ref, args.caption, image_embed, text_embed, reference_canvases=canv)
    doc = report.to_dict()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if args.csv:
        import csv

        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(doc["per_frame_detail"][0]))
            w.writeheader()
            w.writerows(doc["per_frame_detail"])
    return {"report": args.out, **{k: v for k, v in doc.items() if k != "per_frame_detail"}}


def cmd_sweep(cfg: RunConfig, args) -> dict:
    from .pipeline import Pipeline, heldout_set, load_manifest, sweep_ablation, sweep_light_scale

    n, res = cfg.dataset.frames_per_video, cfg.dataset.resolution
    scfg = cfg.sample.sample_config(cfg.seed, n, res, T_infer=args.steps)
    items = heldout_set(load_manifest(cfg), cfg.eval.n_heldout, cfg.eval.heldout_seed, n, cfg.seed)
    if args.limit:
        items = items[: args.limit]
    if args.axis == "light_scale":
        scales = args.values if args.values is not None else cfg.sweep.light_scales
        if not scales:
            raise CliError("empty sweep list", EXIT_CONFIG, path="sweep.light_scales")
        table = sweep_light_scale(Pipeline.from_config(cfg), items, scales, scfg)
    else:
        models = dict(cfg.sweep.ablations) or {"full": str(cfg.light_path)}
        pipes = {name: Pipeline.from_config(cfg, path) for name, path in models.items()}
        table = sweep_ablation(pipes, items, scfg, cfg.eval.diversity_seeds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_json())
    out.with_suffix(".txt").write_text(table.to_text())
    sys.stdout.write(table.to_text())
    return {"table": str(out), "rows": len(table.rows)}


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lumiforge", description="Light-controllable toy video diffusion.")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="run config JSON (defaults apply when omitted)")
        sp.set_defaults(fn=fn)
        return sp

    add("generate-dataset", cmd_generate_dataset, "render frames, canvases and captions")
    add("train-codec", cmd_train_codec, "fit the shared latent codec")
    add("train-backbone", cmd_train_backbone, "warm up the text-to-video backbone")
    sp = add("train", cmd_train, "train the lighting module against the frozen backbone")
    sp.add_argument("--no-dis-loss", action="store_true", help="drop the disentanglement term")
    sp.add_argument("--no-caption-aug", action="store_true", help="train on base captions only")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out", help="light checkpoint path (default: <work_dir>/light.ckpt)")

    sp = add("sample", cmd_sample, "generate a video for a caption and light trajectory")
    sp.add_argument("--caption", required=True)
    sp.add_argument("--trajectory", required=True, help="trajectory JSON file or index into dataset.trajectories")
    sp.add_argument("--light-scale", type=float)
    sp.add_argument("--steps", type=int, help="DDIM steps")
    sp.add_argument("--w", type=float, help="text guidance weight")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--light", help="light checkpoint (default: <work_dir>/light.ckpt)")
    sp.add_argument("--out", required=True, help="output frame directory")
    sp.add_argument("--strip", help="also write a horizontal PNG strip here")

    sp = add("evaluate", cmd_evaluate, "score a frame directory against a reference")
    sp.add_argument("--video", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--reference-canvases", help="canvas frames for the direction metric")
    sp.add_argument("--caption")
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv", help="per-frame values as CSV")

    sp = add("sweep", cmd_sweep, "light-scale or ablation table on the held-out set")
    sp.add_argument("--axis", choices=["light_scale", "ablation"], default="light_scale")
    sp.add_argument("--values", type=float, nargs="*", help="override sweep.light_scales")
    sp.add_argument("--steps", type=int, help="DDIM steps")
    sp.add_argument("--limit", type=int, help="use only the first N held-out items")
    sp.add_argument("--out", required=True, help="table JSON path (an aligned .txt is written alongside)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.command == "sample" and args.light_scale is not None and not 0 <= args.light_scale <= 1:
            raise ConfigError("light scale must lie in [0, 1]", "sample.light_scale")
        _set_seeds(cfg.seed)
        result = args.fn(cfg, args)
    except ConfigError as exc:
        _emit_error("config", exc.message, path=exc.path)
        return EXIT_CONFIG
    except CliError as exc:
        _emit_error("usage" if exc.code == EXIT_CONFIG else "input", str(exc), **exc.detail)
        return exc.code
    except FileNotFoundError as exc:
        _emit_error("missing", str(exc))
        return EXIT_MISSING
    except Exception as exc:  # surfaced as structured JSON, not a traceback
        _emit_error(type(exc).__name__, str(exc))
        if args.verbose:
            raise
        return 1
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
