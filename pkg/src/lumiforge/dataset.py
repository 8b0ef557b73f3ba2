"""Dataset assembly: subjects x trajectories -> frames, canvases, captions, manifest.

Each distinct lighting configuration is rendered once per subject into a
content-addressed pool; per-sample directories hard-link into the pool so a
light position shared by many trajectories costs one render and one file.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import captions as cap
from .canvas import CanvasGeometry, canvas_irradiance
from .grid import LightGrid, Trajectory, load_trajectory, trajectory_to_dict
from .render import DEFAULT_LIGHT_POWER, build_subject, shade_frame, to_uint8

log = logging.getLogger(__name__)

MANIFEST_VERSION = "1"
MANIFEST_NAME = "manifest.json"


class DatasetError(RuntimeError):
    pass


class SampleNotFound(KeyError):
    pass


class IntegrityError(DatasetError):
    pass


@dataclass
class DatasetManifest:
    version: str
    grid: dict
    samples: list[dict]
    root: Path | None = None

    def to_json(self) -> str:
        doc = {"version": self.version, "grid": self.grid, "samples": self.samples}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def sample(self, sample_id: str) -> dict:
        for s in self.samples:
            if s["sample_id"] == sample_id:
                return s
        raise SampleNotFound(sample_id)

    @property
    def sample_ids(self) -> list[str]:
        return [s["sample_id"] for s in self.samples]

    @classmethod
    def load(cls, path: str | Path, verify: bool = True) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        doc = json.loads(path.read_text())
        m = cls(doc["version"], doc["grid"], doc["samples"], path.parent)
        ids = m.sample_ids
        if len(set(ids)) != len(ids):
            raise IntegrityError("duplicate sample ids in manifest")
        if verify:
            for s in m.samples:
                _verify_sample(m.root, s)
        return m


@dataclass
class TrainingSample:
    sample_id: str
    subject_id: int
    frames: np.ndarray    # (T, H, W, 3) float32 in [0, 1]
    canvases: np.ndarray  # (T, H, W, 1) float32 in [0, 1]
    caption: str
    caption_variants: list[str]


def _verify_sample(root: Path, s: dict) -> None:
    for key in ("frames_dir", "canvases_dir", "trajectory_path"):
        if not (root / s[key]).exists():
            raise IntegrityError(f"{s['sample_id']}: missing {root / s[key]}")
    for prefix, key in (("frame", "frames_dir"), ("canvas", "canvases_dir")):
        for t in range(s["n_frames"]):
            p = root / s[key] / f"{prefix}_{t:05d}.png"
            if not p.exists():
                raise IntegrityError(f"{s['sample_id']}: missing {p}")


def _load_png(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode), dtype=np.float32) / 255.0
    except FileNotFoundError as exc:
        raise IntegrityError(f"missing file {path}") from exc
    except OSError as exc:
        raise IntegrityError(f"corrupt file {path}: {exc}") from exc


def load_sample(manifest: DatasetManifest, sample_id: str) -> TrainingSample:
    s = manifest.sample(sample_id)
    root = manifest.root
    res, n = s["resolution"], s["n_frames"]
    frames, canvases = [], []
    for t in range(n):
        f = _load_png(root / s["frames_dir"] / f"frame_{t:05d}.png", "RGB")
        c = _load_png(root / s["canvases_dir"] / f"canvas_{t:05d}.png", "L")
        if f.shape != (res, res, 3) or c.shape != (res, res):
            raise IntegrityError(f"{sample_id}: frame {t} has shape {f.shape}/{c.shape}, expected {res}x{res}")
        frames.append(f)
        canvases.append(c[..., None])
    return TrainingSample(sample_id, s["subject_id"], np.stack(frames), np.stack(canvases),
                          s["caption"], list(s["caption_variants"]))


def _light_key(lights) -> str:
    parts = [f"{p[0]:.4f},{p[1]:.4f},{p[2]:.4f}@{w:.6g}" for p, w in lights]
    return hashlib.sha1(";".join(parts).encode()).hexdigest()[:16]


def _link(src: Path, dst: Path) -> None:
    try:
        os.link(src, dst)
    except OSError:
        shutil.copyfile(src, dst)


def count_videos(n_subjects: int, n_trajectories: int) -> int:
    return n_subjects * n_trajectories


def build_dataset(
    subjects: Sequence[int],
    trajectories: Sequence[str | Path | Trajectory],
    frames_per_video: int,
    resolution: int,
    out_dir: str | Path,
    seed: int = 0,
    n_caption_variants: int = 4,
    caption_aug: bool = True,
    power: float = DEFAULT_LIGHT_POWER,
) -> DatasetManifest:
    if not subjects or not trajectories:
        raise DatasetError("subjects and trajectories must be non-empty")
    if frames_per_video < 1:
        raise DatasetError("frames_per_video must be >= 1")
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not (out_dir / MANIFEST_NAME).exists():
        raise DatasetError(f"{out_dir} exists, is not empty and holds no {MANIFEST_NAME}; refusing to overwrite")

    trajs = []
    for tr in trajectories:
        trajs.append(load_trajectory(tr) if isinstance(tr, (str, Path)) else tr)
    grid: LightGrid = trajs[0].grid
    if any(t.grid != grid for t in trajs):
        raise DatasetError("all trajectories must share one grid")
    trajs = [t.resample(frames_per_video) for t in trajs]

    out_dir.parent.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.partial-", dir=out_dir.parent))
    try:
        samples = _render_all(work, subjects, trajs, resolution, seed, n_caption_variants, caption_aug, power)
        manifest = DatasetManifest(MANIFEST_VERSION, grid.to_dict(), samples)
        (work / MANIFEST_NAME).write_text(manifest.to_json())
    except BaseException:
        shutil.rmtree(work, ignore_errors=True)
        raise
    if out_dir.exists():
        shutil.rmtree(out_dir)
    os.replace(work, out_dir)
    manifest.root = out_dir
    log.info("wrote %d samples to %s", len(samples), out_dir)
    return manifest


def _render_all(work, subjects, trajs, resolution, seed, n_variants, caption_aug, power):
    geometry = CanvasGeometry.for_resolution(resolution)
    canvas_pool = work / "_canvases"
    canvas_pool.mkdir()
    samples = []
    for subject_id in subjects:
        scene = build_subject(int(subject_id), resolution)
        pool = work / str(subject_id) / "_positions"
        pool.mkdir(parents=True)
        base = cap.generate_caption(scene, seed)
        for ti, traj in enumerate(trajs):
            sample_id = f"s{int(subject_id):03d}_t{ti:04d}"
            sdir = work / str(subject_id) / sample_id
            sdir.mkdir()
            for t in range(len(traj)):
                lights = [(p, power * w) for p, w in traj.lights_at(t)]
                key = _light_key(lights)
                fp = pool / f"{key}.png"
                if not fp.exists():
                    Image.fromarray(to_uint8(shade_frame(scene, lights))).save(fp)
                cp = canvas_pool / f"{key}.png"
                if not cp.exists():
                    raw = sum(canvas_irradiance(p, w, geometry) for p, w in lights)
                    Image.fromarray(to_uint8(raw)).save(cp)
                _link(fp, sdir / f"frame_{t:05d}.png")
                _link(cp, sdir / f"canvas_{t:05d}.png")
            (sdir / "trajectory.json").write_text(json.dumps(trajectory_to_dict(traj), indent=1, sort_keys=True) + "\n")
            variants = []
            if caption_aug:
                variants = [c.text for c in cap.augment_caption(base, n_variants, seed * 100003 + int(subject_id))]
            rel = sdir.relative_to(work).as_posix()
            samples.append({
                "sample_id": sample_id,
                "subject_id": int(subject_id),
                "trajectory_path": f"{rel}/trajectory.json",
                "frames_dir": rel,
                "canvases_dir": rel,
                "caption": base.text,
                "caption_variants": variants,
                "n_frames": len(traj),
                "resolution": int(resolution),
            })
    return samples
