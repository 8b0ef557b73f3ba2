"""End-to-end stages and experiments, shared by the CLI and the acceptance suite."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import captions as cap
from . import metrics
from .canvas import CanvasGeometry, CanvasSequence, render_canvas_sequence
from .codec import Codec, train_codec
from .config import RunConfig, build_trajectory
from .dataset import DatasetManifest, build_dataset, load_sample
from .dit import DiT, embed_text
from .grid import LightGrid, LightTrajectory, linear_trajectory, load_trajectory
from .light_encoder import LightModule
from .render import FrameSequence, build_subject, render_video
from .sampler import SampleConfig, sample_latents
from .trainer import encode_samples, jittered_bank, train_backbone, train_light, write_loss_log

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


class MissingCheckpoint(PipelineError, FileNotFoundError):
    pass


# -- stages ------------------------------------------------------------------------

def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise MissingCheckpoint(f"{what} not found at {path}; run the stage that produces it first")
    return Path(path)


def stage_dataset(cfg: RunConfig) -> DatasetManifest:
    grid = cfg.grid.build()
    ds = cfg.dataset
    trajs = [build_trajectory(t, grid, ds.frames_per_video) for t in ds.trajectories]
    return build_dataset(ds.subjects, trajs, ds.frames_per_video, ds.resolution, cfg.dataset_dir,
                         seed=cfg.seed, n_caption_variants=ds.n_caption_variants, caption_aug=ds.caption_aug)


def load_manifest(cfg: RunConfig) -> DatasetManifest:
    return DatasetManifest.load(_require(cfg.dataset_dir / "manifest.json", "dataset manifest"))


def stage_codec(cfg: RunConfig) -> Codec:
    manifest = load_manifest(cfg)
    codec, history = train_codec(manifest, cfg.codec.model_config_(), cfg.codec.steps, cfg.seed)
    codec.save(cfg.codec_path, meta={"seed": cfg.seed, "steps": cfg.codec.steps,
                                     "final_mse": history[-1]["mse"] if history else None})
    return codec


def _samples(cfg: RunConfig):
    manifest = load_manifest(cfg)
    return [load_sample(manifest, sid) for sid in manifest.sample_ids]


def stage_backbone(cfg: RunConfig) -> DiT:
    codec = Codec.load(_require(cfg.codec_path, "codec checkpoint"))
    bb = cfg.backbone
    bank = jittered_bank(codec, _samples(cfg), bb.jitter_variants, cfg.seed)
    model, _ = train_backbone(bank, cfg.dit_config(), bb.steps, lr=bb.lr, batch=bb.batch, seed=cfg.seed)
    model.save(cfg.backbone_path, meta={"seed": cfg.seed, "steps": bb.steps})
    return model


def stage_light(cfg: RunConfig, out: Path | None = None) -> LightModule:
    codec = Codec.load(_require(cfg.codec_path, "codec checkpoint"))
    backbone = DiT.load(_require(cfg.backbone_path, "backbone checkpoint"))
    bank = encode_samples(codec, _samples(cfg), backbone.config.d_text)
    tc = cfg.light.train_config(cfg.seed)
    light, history = train_light(bank, backbone, tc)
    out = Path(out) if out is not None else cfg.light_path
    light.save(out, meta={"seed": cfg.seed, "train": asdict(tc)})
    write_loss_log(history, out.with_suffix(".losses.csv"))
    return light


# -- held-out evaluation set -------------------------------------------------------

@dataclass
class EvalItem:
    item_id: str
    subject_id: int
    caption: str
    trajectory: LightTrajectory


def heldout_captions(subject_id: int, dataset_seed: int, n: int, seed: int, exclude: set[str]) -> list[str]:
    """Caption variants for one subject that never appear in training."""
    base = cap.generate_caption(build_subject(subject_id), dataset_seed)
    out: list[str] = []
    attempt = 0
    while len(out) < n:
        for c in cap.augment_caption(base, 4 * n, seed * 7919 + subject_id * 131 + attempt):
            if c.text not in exclude and c.text not in out:
                out.append(c.text)
                if len(out) == n:
                    break
        attempt += 1
        if attempt > 50:
            raise PipelineError(f"caption bank too small for {n} held-out captions of subject {subject_id}")
    return out


def training_captions(manifest: DatasetManifest) -> set[str]:
    seen = set()
    for s in manifest.samples:
        seen.add(s["caption"])
        seen.update(s["caption_variants"])
    return seen


def heldout_set(manifest: DatasetManifest, n_items: int, seed: int, n_frames: int,
                dataset_seed: int = 0, j_plane: tuple[int, int] = (24, 30)) -> list[EvalItem]:
    """``n_items`` (trajectory, caption) pairs absent from the training data."""
    grid = LightGrid.from_dict(manifest.grid)
    seen_caps = training_captions(manifest)
    seen_paths = set()
    for sid in manifest.sample_ids:
        s = manifest.sample(sid)
        doc = json.loads((manifest.root / s["trajectory_path"]).read_text())
        seen_paths.add(json.dumps(doc.get("points", doc.get("tracks"))))
    subjects = sorted({s["subject_id"] for s in manifest.samples})
    rng = np.random.default_rng([seed, 0xE7A1])
    per_subject = {sid: heldout_captions(sid, dataset_seed, n_items, seed, seen_caps) for sid in subjects}
    hi = grid.n_per_axis - 1
    items = []
    while len(items) < n_items:
        j = int(rng.integers(j_plane[0], j_plane[1] + 1))
        start = (int(rng.integers(0, hi + 1)), j, int(rng.integers(0, hi + 1)))
        end = (int(rng.integers(0, hi + 1)), j, int(rng.integers(0, hi + 1)))
        if abs(start[0] - end[0]) + abs(start[2] - end[2]) < hi // 2:
            continue  # too short to show motion
        traj = linear_trajectory(grid, start, end, n_frames)
        key = json.dumps([list(p) for p in traj.points])
        if key in seen_paths:
            continue
        seen_paths.add(key)
        k = len(items)
        sid = subjects[k % len(subjects)]
        items.append(EvalItem(f"heldout_{k:03d}", sid, per_subject[sid][k // len(subjects)], traj))
    return items


def control_set(manifest: DatasetManifest, n_items: int, seed: int, dataset_seed: int = 0) -> list[EvalItem]:
    """Training trajectories paired with caption variants never seen in training."""
    seen_caps = training_captions(manifest)
    samples = [manifest.sample(sid) for sid in manifest.sample_ids]
    subjects = sorted({s["subject_id"] for s in samples})
    per_subject = {sid: heldout_captions(sid, dataset_seed, n_items, seed, seen_caps) for sid in subjects}
    trajs: dict = {}
    for s in samples:
        traj = load_trajectory(manifest.root / s["trajectory_path"])
        trajs.setdefault(traj, traj)
    trajs = list(trajs.values())
    items = []
    for k in range(n_items):
        sid = subjects[k % len(subjects)]
        items.append(EvalItem(f"control_{k:03d}", sid, per_subject[sid][k // len(subjects)], trajs[k % len(trajs)]))
    return items


# -- generation -------------------------------------------------------------------------

@dataclass
class Pipeline:
    codec: Codec
    backbone: DiT
    light: LightModule | None = None
    _canvas_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_config(cls, cfg: RunConfig, light_path: str | Path | None = None, with_light: bool = True) -> "Pipeline":
        codec = Codec.load(_require(cfg.codec_path, "codec checkpoint"))
        backbone = DiT.load(_require(cfg.backbone_path, "backbone checkpoint"))
        light = None
        if with_light:
            light = LightModule.load(_require(Path(light_path or cfg.light_path), "light encoder checkpoint"))
        return cls(codec, backbone, light)

    def canvas_latents(self, canvases: CanvasSequence) -> torch.Tensor:
        key = canvases.canvases.tobytes()
        if key not in self._canvas_cache:
            self._canvas_cache[key] = self.codec.encode(canvases.as_rgb()).data[None]
        return self._canvas_cache[key]

    def generate(self, caption: str, canvases: CanvasSequence | None, scfg: SampleConfig,
                 use_light: bool = True) -> FrameSequence:
        light = self.light if use_light else None
        cz = None
        if light is not None:
            if canvases is None:
                raise PipelineError("canvases are required when the light module is active")
            cz = self.canvas_latents(canvases)
        text = torch.from_numpy(embed_text(caption, self.backbone.config.d_text))
        z = sample_latents(self.backbone, text, scfg, light, cz)
        return FrameSequence(self.codec.decode(z[0]).numpy().astype(np.float64), scfg.fps)

    def text_embed(self, caption: str) -> np.ndarray:
        return embed_text(caption, self.backbone.config.d_text).astype(np.float64)

    def image_embed(self, frames: np.ndarray) -> np.ndarray:
        from .codec import image_text_embed

        return image_text_embed(self.codec, frames).numpy().astype(np.float64)

    def evaluate(self, video: FrameSequence, reference: FrameSequence, caption: str | None = None,
                 reference_canvases=None) -> metrics.MetricsReport:
        has_proj = self.codec.clip_proj.numel() > 0
        return metrics.evaluate_video(video, reference, caption,
                                      self.image_embed if has_proj else None,
                                      self.text_embed if has_proj else None,
                                      reference_canvases=reference_canvases)


def item_reference(item: EvalItem, resolution: int) -> tuple[FrameSequence, CanvasSequence]:
    video = render_video(build_subject(item.subject_id, resolution), item.trajectory)
    canvases = render_canvas_sequence(item.trajectory, CanvasGeometry.for_resolution(resolution))
    return video, canvases


# -- sweeps ------------------------------------------------------------------------------

METRIC_COLUMNS = ("consistency_embed", "consistency_perceptual", "direction_rmse",
                  "brightness_consistency", "text_similarity")


@dataclass
class SweepTable:
    axis: str
    columns: list[str]
    rows: list[dict]

    def to_json(self) -> str:
        return json.dumps({"axis": self.axis, "columns": self.columns, "rows": self.rows},
                          indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        cells = [self.columns] + [[_fmt(r.get(c)) for c in self.columns] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.columns))]
        lines = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def evaluate_items(pipe: Pipeline, items: Sequence[EvalItem], scfg: SampleConfig, use_light: bool = True,
                   references: dict | None = None) -> dict:
    """Mean of every metric over ``items``."""
    acc: dict[str, list] = {c: [] for c in METRIC_COLUMNS}
    for item in items:
        ref, canv = references[item.item_id] if references else item_reference(item, scfg.resolution)
        video = pipe.generate(item.caption, canv, scfg, use_light)
        rep = pipe.evaluate(video, ref, item.caption).to_dict()
        for c in METRIC_COLUMNS:
            if rep[c] is not None and not np.isnan(rep[c]):
                acc[c].append(rep[c])
    return {c: (float(np.mean(v)) if v else None) for c, v in acc.items()}


def sweep_light_scale(pipe: Pipeline, items: Sequence[EvalItem], scales: Sequence[float],
                      scfg: SampleConfig) -> SweepTable:
    if not scales:
        raise PipelineError("sweep needs at least one light scale")
    if pipe.light is None:
        raise PipelineError("light-scale sweep needs a light module")
    refs = {it.item_id: item_reference(it, scfg.resolution) for it in items}
    rows = []
    for s in scales:
        row = {"light_scale": float(s)}
        row.update(evaluate_items(pipe, items, _with(scfg, light_scale=float(s)), True, refs))
        rows.append(row)
        log.info("light_scale %.2f: %s", s, row)
    return SweepTable("light_scale", ["light_scale", *METRIC_COLUMNS], rows)


def diversity(pipe: Pipeline, items: Sequence[EvalItem], scfg: SampleConfig, n_seeds: int) -> float:
    """Mean cross-seed background diversity over ``items``."""
    out = []
    for item in items:
        _, canv = item_reference(item, scfg.resolution)
        vids = [pipe.generate(item.caption, canv, _with(scfg, seed=scfg.seed + k)) for k in range(n_seeds)]
        out.append(metrics.background_diversity(vids))
    return float(np.mean(out))


def sweep_ablation(pipes: dict[str, Pipeline], items: Sequence[EvalItem], scfg: SampleConfig,
                   n_seeds: int = 4) -> SweepTable:
    if not pipes:
        raise PipelineError("ablation sweep needs at least one model")
    refs = {it.item_id: item_reference(it, scfg.resolution) for it in items}
    rows = []
    for name, pipe in pipes.items():
        row = {"model": name}
        row.update(evaluate_items(pipe, items, scfg, True, refs))
        row["background_diversity"] = diversity(pipe, items, scfg, n_seeds)
        rows.append(row)
    return SweepTable("ablation", ["model", *METRIC_COLUMNS, "background_diversity"], rows)


def _with(scfg: SampleConfig, **kw) -> SampleConfig:
    return SampleConfig(**{**asdict(scfg), **kw})
