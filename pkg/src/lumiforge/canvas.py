"""Lighting canvases: a blank camera-facing plane lit only by the light(s).

The plane passes through the head centre perpendicular to the camera axis and
is seen through the same camera as the subject, so the brightest canvas pixel
marks where the light projects onto the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import LightTrajectory, MultiLightTrajectory
from .render.scene import DEFAULT_LIGHT_POWER, HEAD_CENTER_CM, Camera


class CanvasError(ValueError):
    pass


@dataclass(frozen=True)
class CanvasGeometry:
    camera: Camera = field(default_factory=Camera)
    plane_point: tuple[float, float, float] = HEAD_CENTER_CM

    @classmethod
    def for_resolution(cls, size: int) -> "CanvasGeometry":
        return cls(Camera(width=size, height=size))

    def normal(self) -> np.ndarray:
        fwd, _, _ = self.camera.basis()
        return -fwd

    def surface_points(self) -> np.ndarray:
        """Plane point seen by every pixel, shape (H, W, 3)."""
        origin = np.asarray(self.camera.position, float)
        dirs = self.camera.ray_directions()
        n = self.normal()
        t = ((np.asarray(self.plane_point, float) - origin) @ n) / (dirs @ n)
        return origin + t[..., None] * dirs


@dataclass
class CanvasImage:
    pixels: np.ndarray  # (H, W) in [0, 1]
    light_position_cm: np.ndarray


@dataclass
class CanvasSequence:
    canvases: np.ndarray  # (T, H, W) in [0, 1]
    trajectory_ref: str = ""

    def __len__(self) -> int:
        return len(self.canvases)

    def as_rgb(self) -> np.ndarray:
        """Channel-replicated copy, (T, H, W, 3), for the shared codec."""
        return np.repeat(self.canvases[..., None], 3, axis=-1)


_geometry_cache: dict[CanvasGeometry, tuple[np.ndarray, np.ndarray]] = {}


def _surface(geometry: CanvasGeometry):
    if geometry not in _geometry_cache:
        _geometry_cache[geometry] = (geometry.surface_points(), geometry.normal())
    return _geometry_cache[geometry]


def canvas_irradiance(light_position_cm, intensity: float, geometry: CanvasGeometry | None = None) -> np.ndarray:
    """Pre-clamp canvas: I / d^2 * max(0, n . l) per pixel."""
    geometry = geometry or CanvasGeometry()
    if not intensity > 0:
        raise CanvasError("intensity must be positive")
    light = np.asarray(light_position_cm, dtype=np.float64)
    pts, n = _surface(geometry)
    height = float((light - np.asarray(geometry.plane_point, float)) @ n)
    if height == 0.0:
        raise CanvasError(f"light {light.tolist()} lies on the canvas plane")
    to_light = light - pts
    d2 = np.einsum("hwc,hwc->hw", to_light, to_light)
    cos = (to_light @ n) / np.sqrt(d2)
    return intensity / d2 * np.maximum(cos, 0.0)


def render_canvas(light_position_cm, intensity: float, geometry: CanvasGeometry | None = None) -> CanvasImage:
    raw = canvas_irradiance(light_position_cm, intensity, geometry)
    return CanvasImage(np.clip(raw, 0.0, 1.0), np.asarray(light_position_cm, dtype=np.float64))


def render_canvas_sequence(trajectory: LightTrajectory | MultiLightTrajectory,
                           geometry: CanvasGeometry | None = None,
                           power: float = DEFAULT_LIGHT_POWER, clamp: bool = True,
                           trajectory_ref: str = "") -> CanvasSequence:
    if len(trajectory) < 1:
        raise CanvasError("empty trajectory")
    out = []
    for t in range(len(trajectory)):
        raw = sum(canvas_irradiance(p, power * w, geometry) for p, w in trajectory.lights_at(t))
        out.append(np.clip(raw, 0.0, 1.0) if clamp else raw)
    return CanvasSequence(np.stack(out), trajectory_ref)
