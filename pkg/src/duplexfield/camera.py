"""Pinhole cameras, ray generation, and the spherical pose sampler.

Internal convention is OpenCV-style: ``R`` maps world to camera, the camera
looks along +z in its own frame, and image y grows downward. Rays pass
through pixel centers (px + 0.5, py + 0.5). Dataset manifests store
camera-to-world matrices in the Blender convention (look along -z, y up)
and are converted on load.
"""

import json
from dataclasses import dataclass

import numpy as np

from .field import Bounds, Ray

_ORTHO_TOL = 1e-8
_FLIP_YZ = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray  # (3, 3) world -> camera rotation
    t: np.ndarray  # (3,) translation
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("R must be orthonormal")
        if abs(np.linalg.det(self.R) - 1.0) > _ORTHO_TOL:
            raise ValueError("R must be a proper rotation (det 1)")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    @property
    def forward(self) -> np.ndarray:
        """Optical axis direction in world coordinates."""
        return self.R[2].copy()

    @property
    def intrinsics(self) -> tuple:
        return (self.fx, self.fy, self.cx, self.cy)


@dataclass(frozen=True)
class PoseBounds:
    r_min: float
    r_max: float
    theta_min: float
    theta_max: float
    phi_min: float
    phi_max: float

    def __post_init__(self):
        if self.r_min <= 0:
            raise ValueError("r_min must be positive")
        for lo, hi in ((self.r_min, self.r_max), (self.theta_min, self.theta_max),
                       (self.phi_min, self.phi_max)):
            if lo > hi:
                raise ValueError("pose bounds must satisfy min <= max")


def ray_t_range(origin, direction, bounds: Bounds) -> tuple[float, float]:
    """Clip a ray against an axis-aligned box; full segment fallback on miss."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    safe = np.where(d == 0.0, 1e-300, d)
    ta = (bounds.lo - o) / safe
    tb = (bounds.hi - o) / safe
    t0 = float(np.max(np.minimum(ta, tb)))
    t1 = float(np.min(np.maximum(ta, tb)))
    if t1 <= max(t0, 0.0):
        # miss: a past-the-box segment; density is zero out there anyway
        return 0.0, float(np.linalg.norm(o - bounds.center) + bounds.diagonal)
    return max(t0, 0.0), t1


def ray_for_pixel(cam: Camera, px: int, py: int, bounds: Bounds = None) -> Ray:
    """World-space ray through the center of pixel (px, py)."""
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise ValueError(f"pixel ({px}, {py}) outside {cam.width}x{cam.height} image")
    dc = np.array(
        [(px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0]
    )
    d = cam.R.T @ dc
    d /= np.linalg.norm(d)
    o = cam.center
    if bounds is None:
        t0, t1 = 0.0, 1e4
    else:
        t0, t1 = ray_t_range(o, d, bounds)
    return Ray(o, d, t0, t1)


def rays_for_frame(cam: Camera, bounds: Bounds):
    """All pixel-center rays of a frame, row-major.

    Returns (origins, directions, t_near, t_far) arrays of length W*H.
    """
    xs = np.arange(cam.width) + 0.5
    ys = np.arange(cam.height) + 0.5
    u, v = np.meshgrid(xs, ys)  # (H, W)
    dc = np.stack(
        [(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1
    ).reshape(-1, 3)
    d = dc @ cam.R  # row vectors times R == R.T @ dc
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(cam.center, d.shape).copy()

    safe = np.where(d == 0.0, 1e-300, d)
    ta = (bounds.lo - o) / safe
    tb = (bounds.hi - o) / safe
    t0 = np.maximum(np.minimum(ta, tb).max(axis=1), 0.0)
    t1 = np.maximum(ta, tb).min(axis=1)
    miss = t1 <= t0
    fallback = np.linalg.norm(o - bounds.center, axis=1) + bounds.diagonal
    t0 = np.where(miss, 0.0, t0)
    t1 = np.where(miss, fallback, t1)
    return o, d, t0, t1


def project(cam: Camera, p) -> tuple[float, float, float]:
    """Pinhole projection of a world point to (u, v, camera-space depth)."""
    q = cam.R @ np.asarray(p, dtype=np.float64) + cam.t
    if q[2] <= 1e-9:
        raise ValueError("point is behind the camera")
    return (
        float(cam.fx * q[0] / q[2] + cam.cx),
        float(cam.fy * q[1] / q[2] + cam.cy),
        float(q[2]),
    )


def project_batch(cam: Camera, p: np.ndarray):
    """Vectorized projection; returns (u, v, z) arrays, z <= 0 marks invalid."""
    q = np.atleast_2d(p) @ cam.R.T + cam.t
    z = q[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * q[:, 0] / z + cam.cx
        v = cam.fy * q[:, 1] / z + cam.cy
    return u, v, z


def camera_to_spherical(cam: Camera) -> tuple[float, float, float]:
    """Spherical coordinates (r, theta, phi) of the camera center.

    theta is the polar angle from +z; phi the azimuth from +x.
    """
    c = cam.center
    r = float(np.linalg.norm(c))
    if r < 1e-12:
        raise ValueError("camera center at the origin has no spherical coordinates")
    theta = float(np.arccos(np.clip(c[2] / r, -1.0, 1.0)))
    phi = float(np.arctan2(c[1], c[0]))
    return r, theta, phi


def spherical_to_camera(
    rtp, intrinsics, size, look_target=(0.0, 0.0, 0.0)
) -> Camera:
    """Build a camera at spherical position (r, theta, phi) looking at the
    origin with a canonical (world +z seeded) roll."""
    r, theta, phi = rtp
    fx, fy, cx, cy = intrinsics
    width, height = size
    c = np.array(
        [
            r * np.sin(theta) * np.cos(phi),
            r * np.sin(theta) * np.sin(phi),
            r * np.cos(theta),
        ]
    ) + np.asarray(look_target, dtype=np.float64)
    return look_at_camera(c, intrinsics, size, look_target)


def look_at_camera(position, intrinsics, size, target=(0.0, 0.0, 0.0)) -> Camera:
    """Camera at ``position`` whose optical axis passes through ``target``."""
    fx, fy, cx, cy = intrinsics
    width, height = size
    c = np.asarray(position, dtype=np.float64)
    offset = np.asarray(target, dtype=np.float64) - c
    dist = np.linalg.norm(offset)
    if dist < 1e-12:
        raise ValueError("camera position coincides with the look target")
    f = offset / dist
    up = np.array([0.0, 0.0, 1.0])
    if abs(f @ up) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x_cam = np.cross(f, up)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(f, x_cam)
    R = np.stack([x_cam, y_cam, f])
    return Camera(fx, fy, cx, cy, R, -R @ c, width, height)


def pose_bounds_of(cams) -> PoseBounds:
    """Per-coordinate spherical bounds of a set of camera centers.

    Azimuth is treated on the circle: when the naive span exceeds pi, the
    values are unwrapped to [0, 2*pi) and the branch with the smaller span
    is used.
    """
    if not cams:
        raise ValueError("need at least one camera")
    sph = np.array([camera_to_spherical(c) for c in cams])
    r, theta, phi = sph[:, 0], sph[:, 1], sph[:, 2]
    phi_lo, phi_hi = float(phi.min()), float(phi.max())
    if phi_hi - phi_lo > np.pi:
        wrapped = np.mod(phi, 2.0 * np.pi)
        if wrapped.max() - wrapped.min() < phi_hi - phi_lo:
            phi_lo, phi_hi = float(wrapped.min()), float(wrapped.max())
    return PoseBounds(
        float(r.min()), float(r.max()),
        float(theta.min()), float(theta.max()),
        phi_lo, phi_hi,
    )


def sample_poses_in_bounds(
    bounds: PoseBounds, intrinsics, size, count: int, seed
) -> list:
    """Draw i.i.d. uniform look-at-origin poses inside spherical bounds."""
    rng = np.random.default_rng(seed)
    lo = np.array([bounds.r_min, bounds.theta_min, bounds.phi_min])
    hi = np.array([bounds.r_max, bounds.theta_max, bounds.phi_max])
    triples = rng.uniform(lo, hi, size=(count, 3))
    return [spherical_to_camera(t, intrinsics, size) for t in triples]


def sample_distillation_poses(train_cams, count: int, seed) -> list:
    """Sample novel supervision poses within the training cameras' spherical
    bounds, reusing the first camera's intrinsics and resolution."""
    if not train_cams:
        raise ValueError("need at least one training camera")
    bounds = pose_bounds_of(train_cams)
    ref = train_cams[0]
    return sample_poses_in_bounds(
        bounds, ref.intrinsics, (ref.width, ref.height), count, seed
    )


# --- dataset camera manifests -------------------------------------------------


def load_transforms_manifest(path, default_size=(800, 800)) -> list:
    """Read a synthetic-dataset camera manifest (camera_angle_x + per-frame
    4x4 camera-to-world matrices) into a list of cameras, order preserved."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: malformed camera manifest: {e}") from e
    try:
        angle_x = float(doc["camera_angle_x"])
        frames = doc["frames"]
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: camera manifest missing {e}") from e
    width = int(doc.get("w", default_size[0]))
    height = int(doc.get("h", default_size[1]))
    fx = 0.5 * width / np.tan(0.5 * angle_x)
    cams = []
    for i, frame in enumerate(frames):
        try:
            m = np.asarray(frame["transform_matrix"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"{path}: frame {i}: bad transform_matrix: {e}") from e
        if m.shape != (4, 4) or not np.all(np.isfinite(m)):
            raise ValueError(f"{path}: frame {i}: transform_matrix must be a finite 4x4")
        # Blender camera-to-world -> OpenCV world-to-camera
        r_c2w = m[:3, :3] @ _FLIP_YZ
        R = r_c2w.T
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6 or np.linalg.det(R) < 0.5:
            raise ValueError(f"{path}: frame {i}: rotation is not orthonormal")
        # renormalize json-precision rotations to pass strict invariants
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        cams.append(
            Camera(fx, fx, width / 2.0, height / 2.0, R, -R @ m[:3, 3], width, height)
        )
    return cams


def save_transforms_manifest(path, cams, scene_hash: str = None) -> None:
    """Write cameras in the manifest format ``load_transforms_manifest`` reads."""
    if not cams:
        raise ValueError("need at least one camera")
    ref = cams[0]
    doc = {
        "camera_angle_x": float(2.0 * np.arctan(0.5 * ref.width / ref.fx)),
        "w": int(ref.width),
        "h": int(ref.height),
        "frames": [],
    }
    if scene_hash is not None:
        doc["scene_hash"] = scene_hash
    for i, cam in enumerate(cams):
        m = np.eye(4)
        m[:3, :3] = cam.R.T @ _FLIP_YZ
        m[:3, 3] = cam.center
        doc["frames"].append(
            {"file_path": f"./r_{i:04d}", "transform_matrix": m.tolist()}
        )
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
