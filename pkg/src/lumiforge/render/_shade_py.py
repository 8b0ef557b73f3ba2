"""Vectorised numpy shading kernel; reference twin of ``_shade_ext``."""

from __future__ import annotations

import numpy as np

_SEG_EPS = 1e-6


def _segment_blocked(points, to_light, center, axes):
    o = (points - center) / axes
    d = to_light / axes
    qa = np.einsum("ij,ij->i", d, d)
    qb = 2.0 * np.einsum("ij,ij->i", o, d)
    qc = np.einsum("ij,ij->i", o, o) - 1.0
    disc = qb * qb - 4.0 * qa * qc
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = (-qb - sq) / (2.0 * qa)
    t1 = (-qb + sq) / (2.0 * qa)
    return (disc > 0) & (t1 > _SEG_EPS) & (t0 < 1.0 - _SEG_EPS)


def shade(points, normals, albedo, specular, shininess, obj, view,
          occ_centers, occ_axes, lights, intensities, ambient):
    """Return (ambient, diffuse, specular) radiance, each (N, 3), pre-clamp."""
    n = len(points)
    diff_rgb = np.zeros((n, 3))
    spec = np.zeros(n)
    for light, power in zip(lights, intensities):
        to_light = light - points
        d2 = np.einsum("ij,ij->i", to_light, to_light)
        dist = np.sqrt(d2)
        l = to_light / dist[:, None]
        ndl = np.einsum("ij,ij->i", normals, l)
        lit = ndl > 0.0
        for m in range(len(occ_centers)):
            lit &= ~((obj != m) & _segment_blocked(points, to_light, occ_centers[m], occ_axes[m]))
        falloff = power / d2
        diff = np.where(lit, falloff * ndl, 0.0)
        diff_rgb += diff[:, None] * albedo
        h = l + view
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        ndh = np.maximum(np.einsum("ij,ij->i", normals, h), 0.0)
        spec += np.where(lit, falloff * specular * ndh ** shininess, 0.0)
    amb = ambient * albedo
    return amb, diff_rgb, np.repeat(spec[:, None], 3, axis=1)
