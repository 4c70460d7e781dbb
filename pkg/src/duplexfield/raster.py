"""Software stand-in for hardware rasterization.

Each duplex layer is queried independently with one nearest-hit ray per
pixel, producing per-layer G-buffers (hit mask, position, barycentrics,
triangle id, interpolated features, camera depth) plus a shared per-pixel
view direction. Geometry is frozen: gradients flow to vertex features
only, scattered back through the barycentric weights.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from ._raster_kernels import cast_rays_brute, cast_rays_bvh
from .camera import Camera
from .field import Ray
from .geometry import DuplexGeometry, FeatureMesh, TriangleMesh

LEAF_SIZE = 4
T_FAR_OPEN = 1e30


@dataclass
class BVH:
    """Flat binary bounding-volume tree; node 0 is the root.

    ``child[i] >= 0`` points at the first of two consecutive children;
    leaves have ``child[i] == -1`` and reference ``count`` reordered
    triangles starting at ``start``.
    """

    bmin: np.ndarray
    bmax: np.ndarray
    child: np.ndarray
    start: np.ndarray
    count: np.ndarray
    tri_ids: np.ndarray  # original triangle index per reordered slot
    v0: np.ndarray  # reordered triangle vertices
    v1: np.ndarray
    v2: np.ndarray

    @property
    def arrays(self) -> tuple:
        return (
            self.bmin, self.bmax, self.child, self.start, self.count,
            self.tri_ids, self.v0, self.v1, self.v2,
        )


def build_bvh(mesh: TriangleMesh) -> BVH:
    """Median-split BVH over the longest centroid axis; deterministic."""
    if mesh.is_empty:
        raise ValueError("cannot build a BVH over an empty mesh")
    tv = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    tri_min = tv.min(axis=1)
    tri_max = tv.max(axis=1)
    centroid = tv.mean(axis=1)
    n = len(tv)

    order = np.arange(n, dtype=np.int64)
    bmin, bmax, child, start, count = [], [], [], [], []
    # stack of (node index, lo, hi) ranges over `order`
    stack = [(0, 0, n)]
    bmin.append(None); bmax.append(None); child.append(-1); start.append(0); count.append(0)
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        bmin[node] = tri_min[idx].min(axis=0)
        bmax[node] = tri_max[idx].max(axis=0)
        if hi - lo <= LEAF_SIZE:
            child[node] = -1
            start[node] = lo
            count[node] = hi - lo
            continue
        cent = centroid[idx]
        axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
        order[lo:hi] = idx[np.argsort(cent[:, axis], kind="stable")]
        mid = (lo + hi) // 2
        c = len(bmin)
        child[node] = c
        start[node] = 0
        count[node] = 0
        for _ in range(2):
            bmin.append(None); bmax.append(None); child.append(-1)
            start.append(0); count.append(0)
        stack.append((c, lo, mid))
        stack.append((c + 1, mid, hi))

    tv = tv[order]
    return BVH(
        bmin=np.asarray(bmin, dtype=np.float64),
        bmax=np.asarray(bmax, dtype=np.float64),
        child=np.asarray(child, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64),
        count=np.asarray(count, dtype=np.int64),
        tri_ids=order.astype(np.int32),
        v0=np.ascontiguousarray(tv[:, 0]),
        v1=np.ascontiguousarray(tv[:, 1]),
        v2=np.ascontiguousarray(tv[:, 2]),
    )


@dataclass(frozen=True)
class Hit:
    t: float
    tri: int
    bary: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bary, dtype=np.float64)
        object.__setattr__(self, "bary", b)
        if np.any(b < -1e-9) or abs(b.sum() - 1.0) > 1e-6:
            raise ValueError("invalid barycentric coordinates")


def intersect(bvh: BVH, mesh: TriangleMesh, ray: Ray):
    """Nearest hit along a ray, or None. Back faces count; ties break
    toward the smaller triangle index."""
    hit, t, tri, bary = cast_rays_bvh(
        ray.origin[None, :],
        ray.direction[None, :],
        np.array([ray.t_near]),
        np.array([ray.t_far]),
        bvh.arrays,
    )
    if not hit[0]:
        return None
    return Hit(float(t[0]), int(tri[0]), bary[0])


def intersect_brute(mesh: TriangleMesh, ray: Ray):
    """Independent oracle: scan every triangle for the nearest hit."""
    tv = mesh.vertices[mesh.triangles]
    hit, t, tri, bary = cast_rays_brute(
        ray.origin[None, :],
        ray.direction[None, :],
        np.array([ray.t_near]),
        np.array([ray.t_far]),
        tv[:, 0], tv[:, 1], tv[:, 2],
    )
    if not hit[0]:
        return None
    return Hit(float(t[0]), int(tri[0]), bary[0])


@dataclass
class GBuffer:
    """Per-layer, per-pixel rasterization output.

    Misses carry zero features/positions/barycentrics, triangle id -1 and
    +inf depth, so downstream consumers can rely on the hit mask alone.
    """

    width: int
    height: int
    hit: np.ndarray       # (L, H, W) uint8
    tri: np.ndarray       # (L, H, W) int32
    bary: np.ndarray      # (L, H, W, 3)
    position: np.ndarray  # (L, H, W, 3)
    depth: np.ndarray     # (L, H, W), camera-space z
    feature: np.ndarray   # (L, H, W, F)
    view_dir: np.ndarray  # (H, W, 3)

    @property
    def layer_count(self) -> int:
        return self.hit.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.feature.shape[-1]

    def any_hit(self) -> np.ndarray:
        """(H, W) bool: pixels where at least one layer was hit."""
        return self.hit.any(axis=0)


def _window_rays(cam: Camera, x0: int, y0: int, w: int, h: int):
    xs = x0 + np.arange(w) + 0.5
    ys = y0 + np.arange(h) + 0.5
    u, v = np.meshgrid(xs, ys)
    dc = np.stack(
        [(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1
    ).reshape(-1, 3)
    d = dc @ cam.R
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(cam.center, d.shape)
    return np.ascontiguousarray(o), np.ascontiguousarray(d)


def rasterize(duplex: DuplexGeometry, cam: Camera, bvhs: list = None) -> GBuffer:
    """Cast one ray per pixel against every layer and fill the G-buffer.

    ``bvhs`` may carry prebuilt per-layer BVHs (None entries for empty
    layers); they are built on the fly otherwise.
    """
    return rasterize_window(duplex, cam, 0, 0, cam.width, cam.height, bvhs)


def rasterize_window(
    duplex: DuplexGeometry,
    cam: Camera,
    x0: int,
    y0: int,
    w: int,
    h: int,
    bvhs: list = None,
) -> GBuffer:
    """Rasterize a pixel window [x0, x0+w) x [y0, y0+h) of the frame."""
    if not (0 <= x0 and x0 + w <= cam.width and 0 <= y0 and y0 + h <= cam.height):
        raise ValueError("window outside the frame")
    if bvhs is None:
        bvhs = build_layer_bvhs(duplex)
    n_layers = duplex.layer_count
    fdim = duplex.feature_dim
    npx = h * w
    origins, dirs = _window_rays(cam, x0, y0, w, h)
    t0 = np.zeros(npx)
    t1 = np.full(npx, T_FAR_OPEN)

    hit = np.zeros((n_layers, npx), dtype=np.uint8)
    tri = np.full((n_layers, npx), -1, dtype=np.int32)
    bary = np.zeros((n_layers, npx, 3))
    pos = np.zeros((n_layers, npx, 3))
    depth = np.full((n_layers, npx), np.inf)
    feat = np.zeros((n_layers, npx, fdim))

    for li, (fm, bvh) in enumerate(zip(duplex.layers, bvhs)):
        if bvh is None:
            continue
        if backend.use_numba():
            l_hit, l_t, l_tri, l_bary = cast_rays_bvh(
                origins, dirs, t0, t1, bvh.arrays
            )
        else:
            tv = fm.mesh.vertices[fm.mesh.triangles]
            l_hit, l_t, l_tri, l_bary = cast_rays_brute(
                origins, dirs, t0, t1, tv[:, 0], tv[:, 1], tv[:, 2]
            )
        m = l_hit.astype(bool)
        hit[li] = l_hit
        tri[li] = l_tri
        bary[li] = l_bary
        pos[li, m] = origins[m] + l_t[m, None] * dirs[m]
        depth[li, m] = pos[li, m] @ cam.R[2] + cam.t[2]
        feat[li, m] = interpolate_features_batch(fm, l_tri[m], l_bary[m])

    return GBuffer(
        width=w,
        height=h,
        hit=hit.reshape(n_layers, h, w),
        tri=tri.reshape(n_layers, h, w),
        bary=bary.reshape(n_layers, h, w, 3),
        position=pos.reshape(n_layers, h, w, 3),
        depth=depth.reshape(n_layers, h, w),
        feature=feat.reshape(n_layers, h, w, fdim),
        view_dir=dirs.reshape(h, w, 3),
    )


def build_layer_bvhs(duplex: DuplexGeometry) -> list:
    return [None if fm.mesh.is_empty else build_bvh(fm.mesh) for fm in duplex.layers]


def interpolate_feature(fm: FeatureMesh, hit: Hit) -> np.ndarray:
    """Barycentric combination of the hit triangle's vertex features."""
    tri = fm.mesh.triangles[hit.tri]
    return hit.bary @ fm.features[tri]


def interpolate_features_batch(fm: FeatureMesh, tris, bary) -> np.ndarray:
    verts = fm.mesh.triangles[tris]  # (N, 3)
    fv = fm.features[verts]  # (N, 3, F)
    return np.einsum("nk,nkf->nf", bary, fv)


def scatter_feature_gradient(grad_sink: np.ndarray, fm: FeatureMesh, hit: Hit, upstream) -> None:
    """Adjoint of interpolate_feature: grad[v_i] += b_i * upstream."""
    upstream = np.asarray(upstream, dtype=np.float64)
    tri = fm.mesh.triangles[hit.tri]
    for k in range(3):
        grad_sink[tri[k]] += hit.bary[k] * upstream


def scatter_feature_gradients_batch(
    n_vertices: int, triangles, tris, bary, upstream
) -> np.ndarray:
    """Accumulate per-vertex feature gradients for a batch of hits.

    Pure summation via bincount: the result is independent of hit order.
    """
    fdim = upstream.shape[-1]
    grad = np.zeros(n_vertices * fdim)
    if len(tris):
        verts = triangles[tris]  # (N, 3)
        col = np.arange(fdim)
        for k in range(3):
            flat_idx = (verts[:, k, None] * fdim + col).ravel()
            contrib = (bary[:, k, None] * upstream).ravel()
            grad += np.bincount(flat_idx, weights=contrib, minlength=n_vertices * fdim)
    return grad.reshape(n_vertices, fdim)
