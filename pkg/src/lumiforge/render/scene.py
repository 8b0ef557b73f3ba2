"""Parametric portrait proxy: ellipsoid head + nose in front of a back wall."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..grid import DEFAULT_EXTENT_CM, DEFAULT_ORIGIN_CM

HEAD_CENTER_CM = tuple(float(o + DEFAULT_EXTENT_CM / 2) for o in DEFAULT_ORIGIN_CM)
AMBIENT = 0.05
DEFAULT_LIGHT_POWER = 2000.0
WALL_DEPTH_CM = -90.0

_SKIN_TONES = np.array([
    [0.93, 0.76, 0.64],
    [0.86, 0.66, 0.52],
    [0.76, 0.55, 0.42],
    [0.62, 0.43, 0.32],
    [0.47, 0.32, 0.24],
    [0.36, 0.24, 0.18],
])


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    axes: tuple[float, float, float]

    def __post_init__(self):
        if min(self.axes) <= 0:
            raise ValueError("ellipsoid semi-axes must be positive")


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float] = (HEAD_CENTER_CM[0], 120.0, HEAD_CENTER_CM[2])
    look_at: tuple[float, float, float] = HEAD_CENTER_CM
    vfov: float = math.radians(16.0)
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("image dimensions must be >= 16")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unit (forward, right, up) vectors.

        The world frame is x = image right, y = toward the camera, z = up
        (left-handed, so grid index i grows to the right of the frame).
        """
        fwd = np.asarray(self.look_at, float) - np.asarray(self.position, float)
        fwd /= np.linalg.norm(fwd)
        right = np.cross([0.0, 0.0, 1.0], fwd)
        right /= np.linalg.norm(right)
        up = np.cross(fwd, right)
        return fwd, right, up

    def ray_directions(self) -> np.ndarray:
        """Unnormalised per-pixel ray directions, shape (H, W, 3)."""
        fwd, right, up = self.basis()
        h, w = self.height, self.width
        tan_half = math.tan(self.vfov / 2)
        aspect = w / h
        # pixel centres, symmetric about the optical axis
        xs = (2.0 * np.arange(w) + 1.0 - w) / w * tan_half * aspect
        ys = (h - 2.0 * np.arange(h) - 1.0) / h * tan_half
        return fwd + xs[None, :, None] * right + ys[:, None, None] * up

    def with_resolution(self, size: int) -> "Camera":
        return Camera(self.position, self.look_at, self.vfov, size, size)


@dataclass(frozen=True)
class SubjectScene:
    subject_id: int
    head: Ellipsoid
    nose: Ellipsoid | None
    albedo_skin: tuple[float, float, float]
    specular_strength: float
    shininess: float
    background_albedo: tuple[float, float, float]
    camera: Camera = field(default_factory=Camera)
    wall_depth_cm: float = WALL_DEPTH_CM

    def __post_init__(self):
        for name in ("albedo_skin", "background_albedo"):
            v = getattr(self, name)
            if len(v) != 3 or min(v) < 0 or max(v) > 1:
                raise ValueError(f"{name} must be RGB in [0,1]")
        if not 0 <= self.specular_strength <= 1:
            raise ValueError("specular_strength must be in [0,1]")
        if self.shininess <= 0:
            raise ValueError("shininess must be positive")

    def occluders(self) -> list[Ellipsoid]:
        return [self.head] + ([self.nose] if self.nose is not None else [])

    def to_dict(self) -> dict:
        return asdict(self)

    def with_resolution(self, size: int) -> "SubjectScene":
        return SubjectScene(self.subject_id, self.head, self.nose, self.albedo_skin,
                            self.specular_strength, self.shininess, self.background_albedo,
                            self.camera.with_resolution(size), self.wall_depth_cm)


def build_subject(subject_id: int, resolution: int = 64) -> SubjectScene:
    """Deterministic proxy subject; the head always sits at the grid centroid."""
    if subject_id < 0:
        raise ValueError("subject_id must be >= 0")
    rng = np.random.default_rng([0x1A5E, subject_id])
    cx, cy, cz = HEAD_CENTER_CM
    axes = np.array([8.0, 9.5, 11.0]) * rng.uniform(0.85, 1.15, size=3)
    nose_scale = rng.uniform(0.8, 1.25)
    nose_axes = np.array([1.3, 2.4, 2.8]) * nose_scale
    # nose protrudes from the front of the head at eye-line height (keeps the
    # proxy symmetric top/bottom as well as left/right)
    nose_center = (cx, cy + axes[1] - 0.35 * nose_axes[1], cz)
    tone = _SKIN_TONES[subject_id % len(_SKIN_TONES)]
    albedo = np.clip(tone * rng.uniform(0.92, 1.08, size=3), 0.0, 1.0)
    hue = rng.uniform(0.0, 1.0)
    bg = np.clip(0.35 + 0.25 * np.cos(2 * math.pi * (hue + np.array([0.0, 1 / 3, 2 / 3]))), 0.0, 1.0)
    return SubjectScene(
        subject_id=int(subject_id),
        head=Ellipsoid((cx, cy, cz), tuple(float(a) for a in axes)),
        nose=Ellipsoid(tuple(float(v) for v in nose_center), tuple(float(a) for a in nose_axes)),
        albedo_skin=tuple(float(v) for v in albedo),
        specular_strength=float(rng.uniform(0.1, 0.4)),
        shininess=float(rng.uniform(12.0, 40.0)),
        background_albedo=tuple(float(v) for v in bg),
        camera=Camera(width=resolution, height=resolution),
    )
