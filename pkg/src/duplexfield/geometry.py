"""Mesh extraction: marching cubes, component filtering, layered geometry.

Extraction is vectorized over grid cells with welded vertices (one vertex
per crossed lattice edge), so per-vertex features are shared across all
triangles that touch a vertex. Triangle winding is fixed so normals point
toward decreasing density; for the usual dense-core scenes that means
outward, toward the camera side.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .field import Bounds, DensityGrid

DEGENERATE_AREA = 1e-12

# Canonical identity of each local edge: the lattice corner at its lower end
# plus the axis it runs along. Shared cell edges hash to the same global id.
_EDGE_LOWER = np.minimum(
    CORNER_OFFSETS[EDGE_CORNERS[:, 0]], CORNER_OFFSETS[EDGE_CORNERS[:, 1]]
)
_EDGE_AXIS = np.argmax(
    CORNER_OFFSETS[EDGE_CORNERS[:, 0]] != CORNER_OFFSETS[EDGE_CORNERS[:, 1]], axis=1
)


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int32

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(
            np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1
        )

    def triangle_normals(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            z = np.zeros(3)
            return z, z
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def save_obj(self, path) -> None:
        """ASCII OBJ debug export."""
        with open(path, "w") as f:
            for v in self.vertices:
                f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for t in self.triangles:
                f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def unique_edges(mesh: TriangleMesh, return_counts: bool = False):
    """Undirected edges of the triangle set (sorted vertex pairs)."""
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0, return_counts=return_counts)


@dataclass
class FeatureMesh:
    mesh: TriangleMesh
    features: np.ndarray  # (V, F) float64

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or len(self.features) != len(self.mesh.vertices):
            raise ValueError("features must be one F-vector per vertex")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class DuplexGeometry:
    """Ordered mesh layers, outermost (lowest threshold) first."""

    layers: list
    thresholds: list

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("need at least one layer")
        if len(self.layers) != len(self.thresholds):
            raise ValueError("one threshold per layer")
        t = np.asarray(self.thresholds, dtype=np.float64)
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        self.thresholds = [float(x) for x in t]

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def feature_dim(self) -> int:
        return self.layers[0].feature_dim


def marching_cubes(grid: DensityGrid, iso: float) -> TriangleMesh:
    """Extract the iso-surface of a density grid as a welded triangle mesh.

    Standard 256-case tables with linear edge interpolation. An iso level
    outside the grid's value range yields an empty mesh.
    """
    values = grid.values
    nx, ny, nz = grid.resolution
    below = values < iso

    # cube index per cell: bit k set when corner k is below the iso level
    cube_idx = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for k, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        cube_idx |= (
            below[dx : dx + nx - 1, dy : dy + ny - 1, dz : dz + nz - 1].astype(np.int32)
            << k
        )

    active = np.nonzero(EDGE_TABLE[cube_idx.ravel()] != 0)[0]
    if active.size == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))

    cell_xyz = np.stack(
        np.unravel_index(active, (nx - 1, ny - 1, nz - 1)), axis=1
    )  # (A, 3)
    tri_rows = TRI_TABLE[cube_idx.ravel()[active]][:, :15].reshape(-1, 5, 3)  # (A,5,3)
    valid = tri_rows[:, :, 0] >= 0  # (A, 5)
    a_idx, slot = np.nonzero(valid)
    local_edges = tri_rows[a_idx, slot]  # (M, 3) local edge ids per triangle

    # global edge id = lattice-vertex linear index * 3 + axis
    corner = cell_xyz[a_idx][:, None, :] + _EDGE_LOWER[local_edges]  # (M, 3, 3)
    axis = _EDGE_AXIS[local_edges]  # (M, 3)
    lin = (corner[..., 0] * ny + corner[..., 1]) * nz + corner[..., 2]
    edge_ids = lin * 3 + axis

    uniq, inverse = np.unique(edge_ids.ravel(), return_inverse=True)
    triangles = inverse.reshape(-1, 3).astype(np.int32)

    # interpolate one welded vertex per crossed lattice edge
    u_axis = (uniq % 3).astype(np.int64)
    u_lin = uniq // 3
    u_iz = u_lin % nz
    u_iy = (u_lin // nz) % ny
    u_ix = u_lin // (nz * ny)
    lo_idx = np.stack([u_ix, u_iy, u_iz], axis=1)
    hi_idx = lo_idx.copy()
    hi_idx[np.arange(len(uniq)), u_axis] += 1
    f0 = values[lo_idx[:, 0], lo_idx[:, 1], lo_idx[:, 2]]
    f1 = values[hi_idx[:, 0], hi_idx[:, 1], hi_idx[:, 2]]
    denom = f1 - f0
    t = np.where(denom != 0.0, (iso - f0) / np.where(denom == 0.0, 1.0, denom), 0.5)
    t = np.clip(t, 0.0, 1.0)
    voxel = grid.voxel_size
    pos = grid.bounds.lo + lo_idx * voxel
    pos[np.arange(len(uniq)), u_axis] += t * voxel[u_axis]

    mesh = TriangleMesh(pos, triangles)
    areas = mesh.triangle_areas()
    if np.any(areas < DEGENERATE_AREA):
        mesh = _compact(TriangleMesh(mesh.vertices, mesh.triangles[areas >= DEGENERATE_AREA]))
    return mesh


def _compact(mesh: TriangleMesh) -> TriangleMesh:
    """Drop vertices not referenced by any triangle."""
    if mesh.is_empty:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
    used = np.unique(mesh.triangles.ravel())
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[mesh.triangles])


def filter_components(mesh: TriangleMesh, min_diameter: float) -> TriangleMesh:
    """Remove connected components whose bounding-box diagonal is below
    ``min_diameter``; the largest-diameter component is always kept."""
    if min_diameter < 0:
        raise ValueError("min_diameter must be >= 0")
    if mesh.is_empty or min_diameter == 0.0:
        return mesh
    edges = unique_edges(mesh)
    nv = len(mesh.vertices)
    adj = coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(nv, nv)
    )
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp == 1:
        return mesh

    diam = np.zeros(n_comp)
    for c in range(n_comp):
        pts = mesh.vertices[labels == c]
        diam[c] = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
    keep = (diam >= min_diameter) | (np.arange(n_comp) == np.argmax(diam))
    tri_keep = keep[labels[mesh.triangles[:, 0]]]
    return _compact(TriangleMesh(mesh.vertices, mesh.triangles[tri_keep]))


def attach_features(mesh: TriangleMesh, feature_dim: int, seed) -> FeatureMesh:
    """Attach i.i.d. N(0, 0.1^2) learnable feature vectors to every vertex."""
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    rng = np.random.default_rng(seed)
    features = 0.1 * rng.standard_normal((len(mesh.vertices), feature_dim))
    return FeatureMesh(mesh, features)


def extract_duplex(
    grid: DensityGrid,
    thresholds,
    min_diameter: float = None,
    feature_dim: int = 8,
    seed=0,
) -> DuplexGeometry:
    """Extract one filtered feature mesh per iso threshold.

    Layers are ordered by ascending threshold, so the lowest (largest,
    over-estimated) surface comes first. ``min_diameter`` defaults to
    three voxel diagonals.
    """
    thresholds = [float(t) for t in thresholds]
    if not thresholds or np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be non-empty and strictly increasing")
    if min_diameter is None:
        min_diameter = 3.0 * float(np.linalg.norm(grid.voxel_size))
    seeds = np.random.SeedSequence(seed).spawn(len(thresholds))
    layers = []
    for iso, layer_seed in zip(thresholds, seeds):
        mesh = filter_components(marching_cubes(grid, iso), min_diameter)
        layers.append(attach_features(mesh, feature_dim, layer_seed))
    if all(fm.mesh.is_empty for fm in layers):
        raise ValueError("no threshold produced geometry; scene not extractable")
    return DuplexGeometry(layers, thresholds)


def perturb_vertices(mesh: TriangleMesh, amplitude: float, seed) -> TriangleMesh:
    """Jitter vertices by i.i.d. uniform noise in [-amplitude/2, amplitude/2]
    per axis (peak-to-peak one ``amplitude``)."""
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-0.5 * amplitude, 0.5 * amplitude, size=mesh.vertices.shape)
    return TriangleMesh(mesh.vertices + noise, mesh.triangles)


def warp_vertices(
    mesh: TriangleMesh, amplitude: float, seed, frequency: float = 7.0, waves: int = 4
) -> TriangleMesh:
    """Displace vertices by a smooth random warp field (sum of sinusoidal
    waves), each component bounded by ``amplitude``.

    Unlike white-noise jitter this bends the surface coherently, the way
    extracted proxies are wrong in practice: dents and bulges rather than
    per-vertex fuzz.
    """
    rng = np.random.default_rng(seed)
    disp = np.zeros_like(mesh.vertices)
    for _ in range(waves):
        k = rng.standard_normal(3)
        k *= frequency / np.linalg.norm(k)
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        phase = rng.uniform(0, 2 * np.pi)
        disp += np.sin(mesh.vertices @ k + phase)[:, None] * u
    peak = np.abs(disp).max()
    if peak > 0:
        disp *= amplitude / peak
    return TriangleMesh(mesh.vertices + disp, mesh.triangles)
