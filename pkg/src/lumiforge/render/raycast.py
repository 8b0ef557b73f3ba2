"""Primary-ray casting against the analytic scene (light independent)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Ellipsoid, SubjectScene

HEAD, NOSE, WALL = 0, 1, 2


@dataclass(frozen=True)
class GBuffer:
    """Per-pixel surface attributes, flattened to N = H*W rows."""

    height: int
    width: int
    points: np.ndarray      # (N, 3)
    normals: np.ndarray     # (N, 3) unit
    albedo: np.ndarray      # (N, 3)
    specular: np.ndarray    # (N,)
    shininess: np.ndarray   # (N,)
    obj: np.ndarray         # (N,) int32 object id
    view: np.ndarray        # (N, 3) unit, surface -> camera
    occ_centers: np.ndarray  # (M, 3)
    occ_axes: np.ndarray     # (M, 3)


def _ray_ellipsoid(origin: np.ndarray, dirs: np.ndarray, ell: Ellipsoid) -> np.ndarray:
    """Nearest positive hit distance along each ray, ``inf`` on miss."""
    a = np.asarray(ell.axes, float)
    o = (origin - np.asarray(ell.center, float)) / a
    d = dirs / a
    qa = np.einsum("ij,ij->i", d, d)
    qb = 2.0 * (d @ o)
    qc = float(o @ o) - 1.0
    disc = qb * qb - 4.0 * qa * qc
    t = np.full(len(dirs), np.inf)
    ok = disc > 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = (-qb - sq) / (2.0 * qa)
    t1 = (-qb + sq) / (2.0 * qa)
    near = np.where(t0 > 1e-9, t0, t1)
    ok &= near > 1e-9
    t[ok] = near[ok]
    return t


def _ellipsoid_normals(points: np.ndarray, ell: Ellipsoid) -> np.ndarray:
    a = np.asarray(ell.axes, float)
    g = (points - np.asarray(ell.center, float)) / (a * a)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def cast(scene: SubjectScene) -> GBuffer:
    cam = scene.camera
    origin = np.asarray(cam.position, float)
    dirs = cam.ray_directions().reshape(-1, 3)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    n = len(dirs)

    t_head = _ray_ellipsoid(origin, dirs, scene.head)
    t_nose = _ray_ellipsoid(origin, dirs, scene.nose) if scene.nose is not None else np.full(n, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_wall = (scene.wall_depth_cm - origin[1]) / dirs[:, 1]
    t_wall = np.where(t_wall > 0, t_wall, np.inf)

    ts = np.stack([t_head, t_nose, t_wall], axis=1)
    obj = np.argmin(ts, axis=1).astype(np.int32)
    t = ts[np.arange(n), obj]
    if not np.all(np.isfinite(t)):
        raise ValueError("camera sees past the back wall; check camera placement")
    points = origin + t[:, None] * dirs

    normals = np.zeros_like(points)
    normals[:, 1] = 1.0  # wall faces the camera
    for oid, ell in ((HEAD, scene.head), (NOSE, scene.nose)):
        m = obj == oid
        if ell is not None and m.any():
            normals[m] = _ellipsoid_normals(points[m], ell)

    skin = obj != WALL
    albedo = np.where(skin[:, None], np.asarray(scene.albedo_skin), np.asarray(scene.background_albedo))
    occ = scene.occluders()
    return GBuffer(
        height=cam.height,
        width=cam.width,
        points=np.ascontiguousarray(points),
        normals=np.ascontiguousarray(normals),
        albedo=np.ascontiguousarray(albedo),
        specular=np.where(skin, scene.specular_strength, 0.0),
        shininess=np.where(skin, scene.shininess, 1.0),
        obj=obj,
        view=np.ascontiguousarray(-dirs),
        occ_centers=np.array([e.center for e in occ], dtype=float),
        occ_axes=np.array([e.axes for e in occ], dtype=float),
    )
