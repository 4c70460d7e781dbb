"""Volumetric teacher fields and the volume-rendering oracle.

A :class:`VolumetricField` maps positions to density and (position,
direction) to radiance. Procedural scenes have documented closed forms so
renders can be checked analytically; grid-backed fields trilinearly
interpolate a baked :class:`DensityGrid`. Quadrature uses deterministic
midpoints, so teacher renders are byte-stable under a fixed configuration.
"""

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

GRID_MAGIC = b"DXFGRID1" + b"\x00" * 8  # 16-byte magic, name padded with NULs

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box in world units."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64))
        if self.lo.shape != (3,) or self.hi.shape != (3,):
            raise ValueError("bounds must be two 3-vectors")
        if not np.all(self.lo < self.hi):
            raise ValueError("bounds lo must be strictly below hi")

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)

    @classmethod
    def cube(cls, half_extent: float = 1.0) -> "Bounds":
        h = float(half_extent)
        return cls(np.full(3, -h), np.full(3, h))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64))
        if abs(np.linalg.norm(self.direction) - 1.0) > UNIT_TOL:
            raise ValueError("ray direction must be unit length")
        if not (0.0 <= self.t_near < self.t_far):
            raise ValueError("require 0 <= t_near < t_far")


class VolumetricField:
    """Teacher oracle: density sigma(p) and radiance c(p, d).

    ``density_fn`` maps (N, 3) positions to (N,) non-negative scalars;
    ``radiance_fn`` maps positions and unit directions to (N, 3) RGB.
    Density is forced to zero outside ``bounds`` and radiance is clamped
    to [0, 1], so the type invariants hold for any supplied callables.
    Fields are immutable after construction and safe to sample from many
    threads.
    """

    def __init__(
        self,
        kind: str,
        bounds: Bounds,
        density_fn: Callable[[np.ndarray], np.ndarray],
        radiance_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    ):
        self.kind = kind
        self.bounds = bounds
        self._density_fn = density_fn
        self._radiance_fn = radiance_fn

    def density(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite sample position")
        sigma = np.zeros(p.shape[0], dtype=np.float64)
        inside = self.bounds.contains(p)
        if np.any(inside):
            sigma[inside] = np.maximum(self._density_fn(p[inside]), 0.0)
        return sigma

    def radiance(self, p: np.ndarray, d: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        d = np.atleast_2d(np.asarray(d, dtype=np.float64))
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite sample position")
        rgb = np.zeros((p.shape[0], 3), dtype=np.float64)
        inside = self.bounds.contains(p)
        if np.any(inside):
            rgb[inside] = np.clip(self._radiance_fn(p[inside], d[inside]), 0.0, 1.0)
        return rgb


def sample_density(field: VolumetricField, p) -> float:
    """Density at a single position; zero outside the field bounds."""
    return float(field.density(np.asarray(p, dtype=np.float64)[None, :])[0])


def sample_radiance(field: VolumetricField, p, d) -> np.ndarray:
    """Radiance at a single position for a unit view direction."""
    d = np.asarray(d, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("view direction must be unit length")
    p = np.asarray(p, dtype=np.float64)
    return field.radiance(p[None, :], d[None, :])[0]


def volume_render_batch(
    field: VolumetricField,
    origins: np.ndarray,
    directions: np.ndarray,
    t_near: np.ndarray,
    t_far: np.ndarray,
    n_steps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint-quadrature volume rendering over a batch of rays.

    Returns the accumulated radiance (before background compositing) and
    the final transmittance per ray.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    n = origins.shape[0]

    delta = (t_far - t_near) / n_steps  # (N,)
    steps = (np.arange(n_steps, dtype=np.float64) + 0.5)[None, :]  # (1, S)
    ts = t_near[:, None] + steps * delta[:, None]  # (N, S)
    pts = origins[:, None, :] + ts[:, :, None] * directions[:, None, :]  # (N, S, 3)

    sigma = field.density(pts.reshape(-1, 3)).reshape(n, n_steps)
    alpha = 1.0 - np.exp(-sigma * delta[:, None])  # (N, S)
    trans = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.concatenate([np.ones((n, 1)), trans[:, :-1]], axis=1)  # T_i
    weights = t_before * alpha

    # radiance only where it can contribute (pruned terms are < 1e-12)
    live = weights > 1e-12
    rgb = np.zeros((n, n_steps, 3))
    if np.any(live):
        ray_idx = np.nonzero(live)[0]
        rgb[live] = field.radiance(pts[live], directions[ray_idx])
    color = np.einsum("ns,nsc->nc", weights, rgb)
    return color, trans[:, -1]


def volume_render(field: VolumetricField, ray: Ray, n_steps: int) -> tuple[np.ndarray, float]:
    """Render one ray; returns (RGB before compositing, final transmittance)."""
    color, trans = volume_render_batch(
        field,
        ray.origin[None, :],
        ray.direction[None, :],
        np.array([ray.t_near]),
        np.array([ray.t_far]),
        n_steps,
    )
    return color[0], float(trans[0])


def composite(color: np.ndarray, transmittance: np.ndarray, background) -> np.ndarray:
    """Composite pre-multiplied radiance over a background color."""
    bg = np.asarray(background, dtype=np.float64)
    return color + np.asarray(transmittance)[..., None] * bg


def render_field_image(field, cam, n_steps: int, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Render an H x W x 3 teacher image for a camera pose.

    Deterministic for a fixed (field, camera, n_steps, background); used to
    produce distillation targets and ground-truth frames.
    """
    from .camera import rays_for_frame  # camera depends on field types

    origins, dirs, t0, t1 = rays_for_frame(cam, field.bounds)
    color, trans = volume_render_batch(field, origins, dirs, t0, t1, n_steps)
    img = composite(color, trans, background)
    return img.reshape(cam.height, cam.width, 3)


# --- density grids -----------------------------------------------------------


@dataclass
class DensityGrid:
    """Vertex-centered density lattice over an axis-aligned box."""

    resolution: tuple[int, int, int]
    bounds: Bounds
    values: np.ndarray  # (nx, ny, nz), float64, indexed [ix, iy, iz]

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)
        if any(r < 2 for r in self.resolution):
            raise ValueError("grid resolution must be >= 2 per axis")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.resolution:
            raise ValueError(
                f"grid values shape {self.values.shape} != resolution {self.resolution}"
            )
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("grid values must be finite and non-negative")

    @property
    def voxel_size(self) -> np.ndarray:
        res = np.array(self.resolution, dtype=np.float64)
        return self.bounds.extent / (res - 1.0)

    def vertex_positions(self) -> np.ndarray:
        """Lattice point coordinates, shape (nx, ny, nz, 3)."""
        axes = [
            np.linspace(self.bounds.lo[i], self.bounds.hi[i], self.resolution[i])
            for i in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def sample(self, p: np.ndarray) -> np.ndarray:
        """Trilinear interpolation; exact at lattice points, zero outside."""
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite sample position")
        res = np.array(self.resolution)
        idx = (p - self.bounds.lo) / self.bounds.extent * (res - 1)
        inside = np.all((idx >= 0.0) & (idx <= res - 1), axis=-1)
        out = np.zeros(p.shape[0], dtype=np.float64)
        if not np.any(inside):
            return out
        idx = idx[inside]
        i0 = np.minimum(np.floor(idx).astype(np.int64), res - 2)
        f = idx - i0
        v = self.values
        ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c000 = v[ix, iy, iz]
        c100 = v[ix + 1, iy, iz]
        c010 = v[ix, iy + 1, iz]
        c110 = v[ix + 1, iy + 1, iz]
        c001 = v[ix, iy, iz + 1]
        c101 = v[ix + 1, iy, iz + 1]
        c011 = v[ix, iy + 1, iz + 1]
        c111 = v[ix + 1, iy + 1, iz + 1]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out[inside] = c0 * (1 - fz) + c1 * fz
        return out

    def value_range(self) -> tuple[float, float]:
        return float(self.values.min()), float(self.values.max())

    def save(self, path) -> None:
        """Binary layout: 16-byte magic, u32 resolution triple, f32 bounds
        (lo then hi), f32 densities in x-fastest order; little-endian."""
        with open(path, "wb") as f:
            f.write(GRID_MAGIC)
            f.write(struct.pack("<3I", *self.resolution))
            f.write(struct.pack("<6f", *self.bounds.lo, *self.bounds.hi))
            f.write(self.values.astype("<f4").ravel(order="F").tobytes())

    @classmethod
    def load(cls, path) -> "DensityGrid":
        with open(path, "rb") as f:
            magic = f.read(16)
            if magic != GRID_MAGIC:
                raise ValueError(f"{path}: not a density grid file (bad magic)")
            nx, ny, nz = struct.unpack("<3I", f.read(12))
            b = struct.unpack("<6f", f.read(24))
            raw = f.read(4 * nx * ny * nz)
            if len(raw) != 4 * nx * ny * nz:
                raise ValueError(f"{path}: truncated density grid file")
            values = (
                np.frombuffer(raw, dtype="<f4")
                .astype(np.float64)
                .reshape((nx, ny, nz), order="F")
            )
        return cls((nx, ny, nz), Bounds(np.array(b[:3]), np.array(b[3:])), values)


def bake_grid(field: VolumetricField, resolution) -> DensityGrid:
    """Sample field density at a vertex-centered lattice over its bounds."""
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    resolution = tuple(int(r) for r in resolution)
    if any(r < 2 for r in resolution):
        raise ValueError("bake resolution must be >= 2 per axis")
    grid = DensityGrid(resolution, field.bounds, np.zeros(resolution))
    pts = grid.vertex_positions().reshape(-1, 3)
    grid.values = field.density(pts).reshape(resolution)
    return grid


def grid_field(grid: DensityGrid, radiance_fn=None, kind: str = "grid") -> VolumetricField:
    """Wrap a density grid as a field; default radiance is mid-gray."""
    if radiance_fn is None:
        radiance_fn = lambda p, d: np.full((p.shape[0], 3), 0.5)
    return VolumetricField(kind, grid.bounds, grid.sample, radiance_fn)


# --- procedural scenes -------------------------------------------------------
#
# All scenes live in the [-1, 1]^3 box. Densities use a steep logistic fall-off
# sigma_max / (1 + exp((r - r0) / w)) so that iso-surfaces at small thresholds
# form nested shells around the object, with the lower threshold producing the
# larger (outer) shell.

_TEX_AXES = np.array(
    [[0.9, 0.3, 0.1], [0.2, 0.8, 0.4], [0.4, 0.1, 0.9]], dtype=np.float64
)

GLOSS_LOBE_AXIS = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
GLOSS_LOBE_EXP = 8.0
GLOSS_PEAK = np.array([1.0, 0.97, 0.9])

# glossy-sphere fuzz parameters: an exponential density mantle of angularly
# varying thickness over an opaque core, so appearance is a volumetric mix
# whose depth profile differs across the surface
GLOSS_CORE_RADIUS = 0.45
GLOSS_CORE_SIGMA = 60.0
GLOSS_FUZZ_FALLOFF = 7.0
GLOSS_FUZZ_SCALE = 0.2
_FUZZ_U1 = np.array([0.36190499, 0.79934913, 0.47936264])
_FUZZ_U2 = np.array([-0.70710678, 0.57735027, 0.40824829])


def _logistic_shell(r: np.ndarray, sigma_max: float, r0: float, w: float) -> np.ndarray:
    return sigma_max / (1.0 + np.exp((r - r0) / w))


def _surface_texture(p: np.ndarray, base: float, amp: float, freq: float) -> np.ndarray:
    phase = freq * p @ _TEX_AXES.T
    return base + amp * np.sin(phase)


def _textured_sphere_density(p):
    r = np.linalg.norm(p, axis=-1)
    return _logistic_shell(r, 40.0, 0.5, 0.01)


def _textured_sphere_radiance(p, d):
    return _surface_texture(p, 0.5, 0.45, 7.0)


def fuzz_thickness(direction: np.ndarray) -> np.ndarray:
    """Relative mantle thickness in [0.08, 0.92] for unit directions."""
    a = np.sin(4.0 * direction @ _FUZZ_U1 + 0.7)
    b = np.cos(3.0 * direction @ _FUZZ_U2 - 0.4)
    return 0.5 + 0.42 * a * b


def _glossy_density(p):
    r = np.linalg.norm(p, axis=-1)
    direction = p / np.maximum(r, 1e-12)[:, None]
    depth = np.maximum(0.0, r - GLOSS_CORE_RADIUS)
    mantle = GLOSS_FUZZ_SCALE * fuzz_thickness(direction)
    return GLOSS_CORE_SIGMA * np.exp(-GLOSS_FUZZ_FALLOFF * depth / mantle)


def _glossy_base(p):
    return _surface_texture(p, 0.45, 0.3, 7.0)


def _glossy_radiance(p, d):
    base = _glossy_base(p)
    s = np.maximum(0.0, d @ GLOSS_LOBE_AXIS)
    s = s * s
    s = s * s
    s = s * s  # alignment^8
    return base + s[:, None] * (GLOSS_PEAK - base)


def _two_lobe_density(p):
    c1 = np.array([0.3, 0.0, 0.0])
    c2 = np.array([-0.25, 0.1, -0.05])
    r1 = np.linalg.norm(p - c1, axis=-1)
    r2 = np.linalg.norm(p - c2, axis=-1)
    return _logistic_shell(r1, 25.0, 0.35, 0.012) + _logistic_shell(r2, 25.0, 0.3, 0.012)


def _two_lobe_radiance(p, d):
    return _surface_texture(p, 0.5, 0.4, 9.0)


def _thin_shell_density(p):
    r = np.linalg.norm(p, axis=-1)
    return 30.0 * np.exp(-(((r - 0.45) / 0.035) ** 2))


def _thin_shell_radiance(p, d):
    return _surface_texture(p, 0.55, 0.35, 6.0)


def _radial_ramp_density(p):
    return np.maximum(0.0, 1.0 - np.linalg.norm(p, axis=-1))


def _radial_ramp_radiance(p, d):
    return _surface_texture(p, 0.5, 0.3, 4.0)


SOLID_SPHERE_SIGMA = 4.0
SOLID_SPHERE_RADIUS = 0.5


def _solid_sphere_density(p):
    r = np.linalg.norm(p, axis=-1)
    return np.where(r < SOLID_SPHERE_RADIUS, SOLID_SPHERE_SIGMA, 0.0)


def _solid_sphere_radiance(p, d):
    return np.full((p.shape[0], 3), 0.6)


SCENES: dict[str, tuple[Callable, Callable]] = {
    # textured sphere: view-independent sinusoidal surface texture
    "textured-sphere": (_textured_sphere_density, _textured_sphere_radiance),
    # glossy sphere: opaque core under a fuzzy exponential mantle of varying
    # thickness; texture plus a specular lobe around GLOSS_LOBE_AXIS
    # (radiance at d == axis is GLOSS_PEAK, at d == -axis the base texture)
    "glossy-sphere": (_glossy_density, _glossy_radiance),
    # two overlapping blobs; non-convex iso-surfaces
    "two-lobe-blob": (_two_lobe_density, _two_lobe_radiance),
    # thin gaussian shell at r = 0.45; each threshold yields two nested shells
    "thin-shell": (_thin_shell_density, _thin_shell_radiance),
    # sigma = max(0, 1 - |p|): iso 0.5 is the analytic sphere of radius 0.5
    "radial-ramp": (_radial_ramp_density, _radial_ramp_radiance),
    # hard-edged constant-density ball, flat gray radiance
    "solid-sphere": (_solid_sphere_density, _solid_sphere_radiance),
}


def make_scene(name: str) -> VolumetricField:
    """Construct one of the built-in procedural scenes by id."""
    if name not in SCENES:
        raise KeyError(f"unknown scene {name!r}; available: {sorted(SCENES)}")
    density_fn, radiance_fn = SCENES[name]
    return VolumetricField(name, Bounds.cube(1.0), density_fn, radiance_fn)
