# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled shading kernel; same contract as ``_shade_py.shade``."""

import numpy as np
from libc.math cimport sqrt, pow

cdef double _SEG_EPS = 1e-6


cdef inline bint _blocked(double px, double py, double pz, double tx, double ty, double tz,
                          const double[:, ::1] centers, const double[:, ::1] axes, int m) noexcept nogil:
    cdef double ax = axes[m, 0], ay = axes[m, 1], az = axes[m, 2]
    cdef double ox = (px - centers[m, 0]) / ax
    cdef double oy = (py - centers[m, 1]) / ay
    cdef double oz = (pz - centers[m, 2]) / az
    cdef double dx = tx / ax, dy = ty / ay, dz = tz / az
    cdef double qa = dx * dx + dy * dy + dz * dz
    cdef double qb = 2.0 * (ox * dx + oy * dy + oz * dz)
    cdef double qc = ox * ox + oy * oy + oz * oz - 1.0
    cdef double disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0:
        return False
    cdef double sq = sqrt(disc)
    cdef double t0 = (-qb - sq) / (2.0 * qa)
    cdef double t1 = (-qb + sq) / (2.0 * qa)
    return t1 > _SEG_EPS and t0 < 1.0 - _SEG_EPS


def shade(const double[:, ::1] points, const double[:, ::1] normals, const double[:, ::1] albedo,
          const double[::1] specular, const double[::1] shininess, const int[::1] obj,
          const double[:, ::1] view, const double[:, ::1] occ_centers, const double[:, ::1] occ_axes,
          const double[:, ::1] lights, const double[::1] intensities, double ambient):
    """Return (ambient, diffuse, specular) radiance, each (N, 3), pre-clamp."""
    cdef Py_ssize_t n = points.shape[0], nl = lights.shape[0], no = occ_centers.shape[0]
    amb_a = np.empty((n, 3))
    diff_a = np.zeros((n, 3))
    spec_a = np.zeros((n, 3))
    cdef double[:, ::1] amb = amb_a
    cdef double[:, ::1] diff = diff_a
    cdef double[:, ::1] spec = spec_a
    cdef Py_ssize_t i, k, m
    cdef double tx, ty, tz, d2, dist, lx, ly, lz, ndl, falloff, hx, hy, hz, hn, ndh, s
    cdef bint lit
    with nogil:
        for i in range(n):
            amb[i, 0] = ambient * albedo[i, 0]
            amb[i, 1] = ambient * albedo[i, 1]
            amb[i, 2] = ambient * albedo[i, 2]
            s = 0.0
            for k in range(nl):
                tx = lights[k, 0] - points[i, 0]
                ty = lights[k, 1] - points[i, 1]
                tz = lights[k, 2] - points[i, 2]
                d2 = tx * tx + ty * ty + tz * tz
                dist = sqrt(d2)
                lx = tx / dist
                ly = ty / dist
                lz = tz / dist
                ndl = normals[i, 0] * lx + normals[i, 1] * ly + normals[i, 2] * lz
                lit = ndl > 0.0
                m = 0
                while lit and m < no:
                    if obj[i] != m and _blocked(points[i, 0], points[i, 1], points[i, 2], tx, ty, tz,
                                                occ_centers, occ_axes, m):
                        lit = False
                    m += 1
                if not lit:
                    continue
                falloff = intensities[k] / d2
                diff[i, 0] += falloff * ndl * albedo[i, 0]
                diff[i, 1] += falloff * ndl * albedo[i, 1]
                diff[i, 2] += falloff * ndl * albedo[i, 2]
                hx = lx + view[i, 0]
                hy = ly + view[i, 1]
                hz = lz + view[i, 2]
                hn = sqrt(hx * hx + hy * hy + hz * hz)
                ndh = (normals[i, 0] * hx + normals[i, 1] * hy + normals[i, 2] * hz) / hn
                if ndh < 0.0:
                    ndh = 0.0
                s += falloff * specular[i] * pow(ndh, shininess[i])
            spec[i, 0] = s
            spec[i, 1] = s
            spec[i, 2] = s
    return amb_a, diff_a, spec_a
