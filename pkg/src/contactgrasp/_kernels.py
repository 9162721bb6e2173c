"""Compiled inner loops for ray casting and box/triangle overlap."""
import numpy as np
from numba import njit

RAY_EPS = 1e-12


@njit(cache=True)
def _ray_aabb(o, d, lo, hi):
    tmin = -np.inf
    tmax = np.inf
    for k in range(3):
        if abs(d[k]) < 1e-300:
            if o[k] < lo[k] or o[k] > hi[k]:
                return False
        else:
            t1 = (lo[k] - o[k]) / d[k]
            t2 = (hi[k] - o[k]) / d[k]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
            if tmin > tmax:
                return False
    return tmax >= 0.0


@njit(cache=True)
def ray_first_hits(origins, dirs, v0, e1, e2, tmin):
    """Nearest triangle hit per ray (Moller-Trumbore, two-sided).

    Returns ``(t, face)`` with ``t = inf`` and ``face = -1`` on a miss.
    """
    n_rays = origins.shape[0]
    n_tri = v0.shape[0]
    t_out = np.full(n_rays, np.inf)
    f_out = np.full(n_rays, -1, dtype=np.int64)
    lo = np.empty(3)
    hi = np.empty(3)
    for k in range(3):
        lo[k] = np.inf
        hi[k] = -np.inf
    for i in range(n_tri):
        for k in range(3):
            a = v0[i, k]
            b = a + e1[i, k]
            c = a + e2[i, k]
            lo[k] = min(lo[k], a, b, c)
            hi[k] = max(hi[k], a, b, c)
    pad = 1e-9 * (1.0 + max(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]))
    for k in range(3):
        lo[k] -= pad
        hi[k] += pad
    for r in range(n_rays):
        o = origins[r]
        d = dirs[r]
        if not _ray_aabb(o, d, lo, hi):
            continue
        best = np.inf
        best_f = -1
        for i in range(n_tri):
            px = d[1] * e2[i, 2] - d[2] * e2[i, 1]
            py = d[2] * e2[i, 0] - d[0] * e2[i, 2]
            pz = d[0] * e2[i, 1] - d[1] * e2[i, 0]
            det = e1[i, 0] * px + e1[i, 1] * py + e1[i, 2] * pz
            if abs(det) < 1e-18:
                continue
            inv = 1.0 / det
            sx = o[0] - v0[i, 0]
            sy = o[1] - v0[i, 1]
            sz = o[2] - v0[i, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = sy * e1[i, 2] - sz * e1[i, 1]
            qy = sz * e1[i, 0] - sx * e1[i, 2]
            qz = sx * e1[i, 1] - sy * e1[i, 0]
            v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[i, 0] * qx + e2[i, 1] * qy + e2[i, 2] * qz) * inv
            if t > tmin and t < best:
                best = t
                best_f = i
        t_out[r] = best
        f_out[r] = best_f
    return t_out, f_out


@njit(cache=True)
def _separated(p0, p1, p2, ax, ay, az, axes, half):
    n2 = ax * ax + ay * ay + az * az
    if n2 < 1e-24:
        return False
    a = p0[0] * ax + p0[1] * ay + p0[2] * az
    b = p1[0] * ax + p1[1] * ay + p1[2] * az
    c = p2[0] * ax + p2[1] * ay + p2[2] * az
    lo = min(a, b, c)
    hi = max(a, b, c)
    r = 0.0
    for k in range(3):
        r += half[k] * abs(axes[k, 0] * ax + axes[k, 1] * ay + axes[k, 2] * az)
    tol = 1e-12 * np.sqrt(n2)
    return lo > r + tol or hi < -r - tol


@njit(cache=True)
def _box_triangle_overlap(center, axes, half, a, b, c):
    # triangle in box-relative world coordinates
    p0 = a - center
    p1 = b - center
    p2 = c - center
    # box face normals
    for k in range(3):
        if _separated(p0, p1, p2, axes[k, 0], axes[k, 1], axes[k, 2], axes, half):
            return False
    f0 = p1 - p0
    f1 = p2 - p1
    f2 = p0 - p2
    nx = f0[1] * f1[2] - f0[2] * f1[1]
    ny = f0[2] * f1[0] - f0[0] * f1[2]
    nz = f0[0] * f1[1] - f0[1] * f1[0]
    if _separated(p0, p1, p2, nx, ny, nz, axes, half):
        return False
    for k in range(3):
        ux = axes[k, 0]
        uy = axes[k, 1]
        uz = axes[k, 2]
        for e in range(3):
            if e == 0:
                f = f0
            elif e == 1:
                f = f1
            else:
                f = f2
            cx = uy * f[2] - uz * f[1]
            cy = uz * f[0] - ux * f[2]
            cz = ux * f[1] - uy * f[0]
            if _separated(p0, p1, p2, cx, cy, cz, axes, half):
                return False
    return True


@njit(cache=True)
def boxes_hit_triangles(centers, axes, halves, tri, tri_lo, tri_hi):
    """For each oriented box, whether it overlaps any triangle.

    ``axes[i]`` holds the box's unit axes as rows; ``tri`` is ``(T, 3, 3)``.
    """
    n = centers.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    ext = np.empty(3)
    for i in range(n):
        for k in range(3):
            ext[k] = (halves[i, 0] * abs(axes[i, 0, k]) + halves[i, 1] * abs(axes[i, 1, k])
                      + halves[i, 2] * abs(axes[i, 2, k]))
        for j in range(tri.shape[0]):
            skip = False
            for k in range(3):
                if tri_lo[j, k] > centers[i, k] + ext[k] or tri_hi[j, k] < centers[i, k] - ext[k]:
                    skip = True
                    break
            if skip:
                continue
            if _box_triangle_overlap(centers[i], axes[i], halves[i], tri[j, 0], tri[j, 1], tri[j, 2]):
                out[i] = True
                break
    return out
