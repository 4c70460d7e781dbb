"""Ray-casting inner loops.

``cast_rays_bvh_loop`` is the traversal kernel: plain Python over numpy
arrays, jitted with numba on the numba backend. ``cast_rays_brute`` is the
vectorized numpy path; it scans every triangle and serves both as the
numpy-backend rasterization fallback and as the independent oracle the BVH
is checked against. Both resolve ties (equal t) toward the smaller
triangle index, so their outputs are interchangeable.
"""

import numpy as np

from . import backend

try:
    from numba import prange  # behaves like range when not jitted
except ImportError:  # pragma: no cover - backend falls back to numpy
    prange = range

DET_EPS = 1e-9
BARY_EPS = 1e-9
_STACK_DEPTH = 96


def cast_rays_bvh_loop(
    origins, dirs, t_near, t_far,
    bmin, bmax, child, start, count,
    tri_ids, v0, v1, v2,
    out_hit, out_t, out_tri, out_bary,
):
    n = origins.shape[0]
    for i in prange(n):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        inv_dx = 1.0 / dx if dx != 0.0 else 1e300
        inv_dy = 1.0 / dy if dy != 0.0 else 1e300
        inv_dz = 1.0 / dz if dz != 0.0 else 1e300
        tn = t_near[i]
        tf = t_far[i]

        best_t = np.inf
        best_tri = -1
        best_b1 = 0.0
        best_b2 = 0.0

        stack = np.empty(_STACK_DEPTH, dtype=np.int64)
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]

            # slab test against the node box
            t0x = (bmin[node, 0] - ox) * inv_dx
            t1x = (bmax[node, 0] - ox) * inv_dx
            if t0x > t1x:
                t0x, t1x = t1x, t0x
            t0y = (bmin[node, 1] - oy) * inv_dy
            t1y = (bmax[node, 1] - oy) * inv_dy
            if t0y > t1y:
                t0y, t1y = t1y, t0y
            t0z = (bmin[node, 2] - oz) * inv_dz
            t1z = (bmax[node, 2] - oz) * inv_dz
            if t0z > t1z:
                t0z, t1z = t1z, t0z
            tmin = max(max(t0x, t0y), max(t0z, tn))
            tmax = min(min(t1x, t1y), min(t1z, min(tf, best_t)))
            if tmin > tmax:
                continue

            c = child[node]
            if c >= 0:
                stack[top] = c
                stack[top + 1] = c + 1
                top += 2
                continue

            for j in range(start[node], start[node] + count[node]):
                ax, ay, az = v0[j, 0], v0[j, 1], v0[j, 2]
                e1x = v1[j, 0] - ax
                e1y = v1[j, 1] - ay
                e1z = v1[j, 2] - az
                e2x = v2[j, 0] - ax
                e2y = v2[j, 1] - ay
                e2z = v2[j, 2] - az
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if -DET_EPS < det < DET_EPS:
                    continue
                inv_det = 1.0 / det
                tx = ox - ax
                ty = oy - ay
                tz = oz - az
                u = (tx * px + ty * py + tz * pz) * inv_det
                if u < -BARY_EPS or u > 1.0 + BARY_EPS:
                    continue
                qx = ty * e1z - tz * e1y
                qy = tz * e1x - tx * e1z
                qz = tx * e1y - ty * e1x
                v = (dx * qx + dy * qy + dz * qz) * inv_det
                if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
                if t < tn or t > tf:
                    continue
                tid = tri_ids[j]
                if t < best_t or (t == best_t and tid < best_tri):
                    best_t = t
                    best_tri = tid
                    best_b1 = u
                    best_b2 = v

        if best_tri >= 0:
            out_hit[i] = 1
            out_t[i] = best_t
            out_tri[i] = best_tri
            out_bary[i, 0] = 1.0 - best_b1 - best_b2
            out_bary[i, 1] = best_b1
            out_bary[i, 2] = best_b2
        else:
            out_hit[i] = 0
            out_t[i] = np.inf
            out_tri[i] = -1
            out_bary[i, 0] = 0.0
            out_bary[i, 1] = 0.0
            out_bary[i, 2] = 0.0


_jitted_cast = None


def _get_jitted_cast():
    global _jitted_cast
    if _jitted_cast is None:
        import numba

        _jitted_cast = numba.njit(cache=True, parallel=True, fastmath=False)(
            cast_rays_bvh_loop
        )
    return _jitted_cast


def cast_rays_bvh(origins, dirs, t_near, t_far, bvh_arrays):
    """Nearest-hit query for a batch of rays against a BVH."""
    n = origins.shape[0]
    out_hit = np.zeros(n, dtype=np.uint8)
    out_t = np.full(n, np.inf)
    out_tri = np.full(n, -1, dtype=np.int32)
    out_bary = np.zeros((n, 3))
    fn = _get_jitted_cast() if backend.use_numba() else cast_rays_bvh_loop
    fn(origins, dirs, t_near, t_far, *bvh_arrays, out_hit, out_t, out_tri, out_bary)
    return out_hit, out_t, out_tri, out_bary


def moller_trumbore_all(origin, direction, v0, v1, v2):
    """Vectorized intersection of one ray with every triangle.

    Returns (valid mask, t, b1, b2) arrays over triangles.
    """
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(np.broadcast_to(direction, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) >= DET_EPS
    inv_det = np.where(ok, 1.0 / np.where(det == 0.0, 1.0, det), 0.0)
    tvec = origin - v0
    u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)
    v = np.einsum("ij,ij->i", np.broadcast_to(direction, e1.shape), qvec) * inv_det
    t = np.einsum("ij,ij->i", e2, qvec) * inv_det
    valid = (
        ok
        & (u >= -BARY_EPS)
        & (u <= 1.0 + BARY_EPS)
        & (v >= -BARY_EPS)
        & (u + v <= 1.0 + BARY_EPS)
    )
    return valid, t, u, v


def cast_rays_brute(origins, dirs, t_near, t_far, v0, v1, v2):
    """Nearest-hit query scanning all triangles; ties go to the smaller index."""
    n = origins.shape[0]
    out_hit = np.zeros(n, dtype=np.uint8)
    out_t = np.full(n, np.inf)
    out_tri = np.full(n, -1, dtype=np.int32)
    out_bary = np.zeros((n, 3))
    if len(v0) == 0:
        return out_hit, out_t, out_tri, out_bary
    for i in range(n):
        valid, t, u, v = moller_trumbore_all(origins[i], dirs[i], v0, v1, v2)
        valid &= (t >= t_near[i]) & (t <= t_far[i])
        if not np.any(valid):
            continue
        idx = np.nonzero(valid)[0]
        best = idx[np.argmin(t[idx])]  # argmin returns the first == smallest index
        out_hit[i] = 1
        out_t[i] = t[best]
        out_tri[i] = best
        out_bary[i, 0] = 1.0 - u[best] - v[best]
        out_bary[i, 1] = u[best]
        out_bary[i, 2] = v[best]
    return out_hit, out_t, out_tri, out_bary
