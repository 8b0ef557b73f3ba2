"""Analytic portrait renderer.

The per-pixel shading loop runs in the compiled ``_shade_ext`` kernel when it
is importable, otherwise in the numpy twin ``_shade_py``. Set
``LUMIFORGE_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import functools
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from ..grid import LightTrajectory, MultiLightTrajectory
from . import _shade_py
from .raycast import GBuffer, cast
from .scene import (AMBIENT, DEFAULT_LIGHT_POWER, HEAD_CENTER_CM, Camera, Ellipsoid,
                    SubjectScene, build_subject)

try:
    if os.environ.get("LUMIFORGE_PURE_PYTHON"):
        raise ImportError("fallback forced by LUMIFORGE_PURE_PYTHON")
    from . import _shade_ext as _kernel
    BACKEND = "cython"
except ImportError:
    _kernel = _shade_py
    BACKEND = "numpy"

KERNELS = {"numpy": _shade_py}
if BACKEND == "cython":
    KERNELS["cython"] = _kernel

__all__ = [
    "AMBIENT", "BACKEND", "DEFAULT_LIGHT_POWER", "HEAD_CENTER_CM", "Camera", "Ellipsoid",
    "FrameSequence", "GBuffer", "SubjectScene", "build_subject", "cast", "render_video",
    "shade_components", "shade_frame", "save_frames", "load_frames",
]


class RenderError(ValueError):
    pass


@dataclass
class FrameSequence:
    frames: np.ndarray  # (T, H, W, 3) float64 in [0, 1]
    fps: float = 8.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"expected (T, H, W, 3) frames, got {self.frames.shape}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    def __len__(self) -> int:
        return len(self.frames)


@functools.lru_cache(maxsize=16)
def _gbuffer(scene: SubjectScene) -> GBuffer:
    return cast(scene)


def _lights_array(lights):
    if not lights:
        raise RenderError("at least one light is required")
    pos = np.array([np.asarray(p, dtype=np.float64) for p, _ in lights], dtype=np.float64).reshape(-1, 3)
    power = np.array([float(i) for _, i in lights], dtype=np.float64)
    if np.any(~(power > 0)):
        raise RenderError("light intensities must be positive")
    return np.ascontiguousarray(pos), power


def shade_components(scene: SubjectScene, lights: Sequence[tuple], backend: str | None = None) -> dict:
    """Pre-clamp radiance split into ambient / diffuse / specular, each (H, W, 3)."""
    kernel = KERNELS[backend] if backend else _kernel
    gb = _gbuffer(scene)
    pos, power = _lights_array(lights)
    for p in pos:
        d2 = np.einsum("ij,ij->i", gb.points - p, gb.points - p)
        if d2.min() <= 1e-18:
            raise RenderError(f"light at {p.tolist()} coincides with a visible surface point")
    amb, diff, spec = kernel.shade(
        gb.points, gb.normals, gb.albedo, gb.specular, gb.shininess, gb.obj, gb.view,
        gb.occ_centers, gb.occ_axes, pos, power, AMBIENT,
    )
    shape = (gb.height, gb.width, 3)
    return {"ambient": np.asarray(amb).reshape(shape),
            "diffuse": np.asarray(diff).reshape(shape),
            "specular": np.asarray(spec).reshape(shape)}


def shade_frame(scene: SubjectScene, lights: Sequence[tuple], backend: str | None = None,
                clamp: bool = True) -> np.ndarray:
    c = shade_components(scene, lights, backend)
    img = c["ambient"] + c["diffuse"] + c["specular"]
    return np.clip(img, 0.0, 1.0) if clamp else img


def render_video(scene: SubjectScene, trajectory: LightTrajectory | MultiLightTrajectory,
                 fps: float = 8.0, power: float = DEFAULT_LIGHT_POWER,
                 backend: str | None = None) -> FrameSequence:
    if len(trajectory) < 1:
        raise RenderError("empty trajectory")
    frames = [
        shade_frame(scene, [(p, power * w) for p, w in trajectory.lights_at(t)], backend)
        for t in range(len(trajectory))
    ]
    return FrameSequence(np.stack(frames), fps)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_frames(video: FrameSequence, out_dir: str | Path, prefix: str = "frame",
                metadata: dict | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(video.frames):
        p = out / f"{prefix}_{t:05d}.png"
        Image.fromarray(to_uint8(frame)).save(p)
        paths.append(p)
    if metadata is not None:
        meta = dict(metadata, fps=video.fps, n_frames=len(video))
        (out / "metadata.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return paths


def load_frames(in_dir: str | Path, prefix: str = "frame", fps: float = 8.0) -> FrameSequence:
    paths = sorted(Path(in_dir).glob(f"{prefix}_*.png"))
    if not paths:
        raise FileNotFoundError(f"no {prefix}_*.png files in {in_dir}")
    frames = [np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0 for p in paths]
    return FrameSequence(np.stack(frames), fps)
