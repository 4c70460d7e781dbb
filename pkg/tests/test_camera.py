import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duplexfield.camera import (
    Camera,
    PoseBounds,
    camera_to_spherical,
    load_transforms_manifest,
    pose_bounds_of,
    project,
    ray_for_pixel,
    sample_distillation_poses,
    sample_poses_in_bounds,
    save_transforms_manifest,
    spherical_to_camera,
)
from duplexfield.field import Bounds

INTR = (100.0, 100.0, 50.0, 50.0)
SIZE = (100, 100)


def _cam(r=2.0, theta=0.9, phi=0.4):
    return spherical_to_camera((r, theta, phi), INTR, SIZE)


class TestProject:
    def test_optical_axis_point(self):
        cam = _cam()
        p = cam.center + 1.7 * cam.forward
        u, v, z = project(cam, p)
        assert u == pytest.approx(cam.cx, abs=1e-9)
        assert v == pytest.approx(cam.cy, abs=1e-9)
        assert z == pytest.approx(1.7, abs=1e-9)

    def test_identity_pose_formula(self):
        cam = Camera(100.0, 100.0, 50.0, 50.0, np.eye(3), np.zeros(3), 100, 100)
        u, v, z = project(cam, (0.1, 0.0, 1.0))
        assert (u, v, z) == pytest.approx((60.0, 50.0, 1.0))

    def test_behind_camera_rejected(self):
        cam = Camera(100.0, 100.0, 50.0, 50.0, np.eye(3), np.zeros(3), 100, 100)
        with pytest.raises(ValueError, match="behind"):
            project(cam, (0.0, 0.0, -1.0))


class TestRayForPixel:
    def test_principal_point_is_forward(self):
        cam = Camera(100.0, 100.0, 50.5, 50.5, np.eye(3), np.zeros(3), 101, 101)
        ray = ray_for_pixel(cam, 50, 50)
        assert np.allclose(ray.direction, cam.forward, atol=1e-12)

    def test_round_trip_through_projection(self):
        cam = _cam()
        for px, py in [(0, 0), (99, 99), (13, 77)]:
            ray = ray_for_pixel(cam, px, py, Bounds.cube(1.0))
            for s in (0.5, 2.0, 7.0):
                u, v, _ = project(cam, ray.origin + s * ray.direction)
                assert u == pytest.approx(px + 0.5, abs=1e-6)
                assert v == pytest.approx(py + 0.5, abs=1e-6)

    def test_adjacent_pixels_small_angle(self):
        cam = _cam()
        r1 = ray_for_pixel(cam, 50, 50)
        r2 = ray_for_pixel(cam, 51, 50)
        angle = np.arccos(np.clip(r1.direction @ r2.direction, -1, 1))
        assert angle == pytest.approx(1.0 / cam.fx, rel=0.02)

    def test_out_of_range_pixel(self):
        cam = _cam()
        with pytest.raises(ValueError):
            ray_for_pixel(cam, 100, 0)

    @settings(max_examples=30, deadline=None)
    @given(
        r=st.floats(1.5, 5.0),
        theta=st.floats(0.1, 3.0),
        phi=st.floats(-3.1, 3.1),
        px=st.integers(0, 99),
        py=st.integers(0, 99),
    )
    def test_project_ray_identity_property(self, r, theta, phi, px, py):
        cam = spherical_to_camera((r, theta, phi), INTR, SIZE)
        ray = ray_for_pixel(cam, px, py)
        u, v, _ = project(cam, ray.origin + 2.0 * ray.direction)
        assert abs(u - (px + 0.5)) < 1e-6
        assert abs(v - (py + 0.5)) < 1e-6


class TestSpherical:
    def test_pole(self):
        cam = spherical_to_camera((2.0, 0.0, 0.0), INTR, SIZE)
        r, theta, phi = camera_to_spherical(cam)
        assert (r, theta, phi) == pytest.approx((2.0, 0.0, 0.0), abs=1e-12)

    def test_textbook_conversion(self):
        cam = spherical_to_camera((np.sqrt(2.0), np.pi / 2, np.pi / 4), INTR, SIZE)
        assert np.allclose(cam.center, (1.0, 1.0, 0.0), atol=1e-12)

    def test_round_trip_center(self):
        for rtp in [(2.0, 0.7, 1.1), (3.3, 2.4, -2.9), (1.1, 1.5708, 0.0)]:
            cam = spherical_to_camera(rtp, INTR, SIZE)
            back = spherical_to_camera(camera_to_spherical(cam), INTR, SIZE)
            assert np.allclose(cam.center, back.center, atol=1e-9)

    def test_center_at_origin_rejected(self):
        cam = Camera(100.0, 100.0, 50.0, 50.0, np.eye(3), np.zeros(3), 100, 100)
        with pytest.raises(ValueError):
            camera_to_spherical(cam)

    def test_canonical_roll_is_reproducible(self):
        a = spherical_to_camera((2.5, 1.0, 0.3), INTR, SIZE)
        b = spherical_to_camera((2.5, 1.0, 0.3), INTR, SIZE)
        assert np.array_equal(a.R, b.R)


class TestPoseSampler:
    def test_count(self, small_cams):
        out = sample_distillation_poses(small_cams, 1000, seed=3)
        assert len(out) == 1000

    def test_degenerate_bounds_reproduce_pose(self):
        cam = _cam(2.2, 1.1, 0.7)
        out = sample_distillation_poses([cam, cam], 10, seed=1)
        for s in out:
            assert np.allclose(s.center, cam.center, atol=1e-9)

    def test_samples_within_bounds(self, small_cams):
        bounds = pose_bounds_of(small_cams)
        out = sample_distillation_poses(small_cams, 500, seed=5)
        for cam in out:
            r, theta, phi = camera_to_spherical(cam)
            assert bounds.r_min - 1e-9 <= r <= bounds.r_max + 1e-9
            assert bounds.theta_min - 1e-9 <= theta <= bounds.theta_max + 1e-9
            two_pi = 2.0 * np.pi
            ok = (
                bounds.phi_min - 1e-9 <= phi <= bounds.phi_max + 1e-9
                or bounds.phi_min - 1e-9 <= phi + two_pi <= bounds.phi_max + 1e-9
                or bounds.phi_min - 1e-9 <= phi - two_pi <= bounds.phi_max + 1e-9
            )
            assert ok

    def test_samples_look_at_origin(self, small_cams):
        for cam in sample_distillation_poses(small_cams, 64, seed=6):
            to_origin = -cam.center / np.linalg.norm(cam.center)
            angle = np.arccos(np.clip(cam.forward @ to_origin, -1, 1))
            assert angle < 1e-6

    def test_deterministic(self, small_cams):
        a = sample_distillation_poses(small_cams, 16, seed=9)
        b = sample_distillation_poses(small_cams, 16, seed=9)
        for x, y in zip(a, b):
            assert np.array_equal(x.R, y.R) and np.array_equal(x.t, y.t)

    def test_phi_wraparound_unwrapped(self):
        # cameras straddling the -pi/+pi seam: span must be the short arc
        cams = [
            _cam(2.5, 1.2, np.pi - 0.1),
            _cam(2.5, 1.2, -np.pi + 0.1),
            _cam(2.5, 1.2, np.pi - 0.05),
        ]
        bounds = pose_bounds_of(cams)
        assert bounds.phi_max - bounds.phi_min < 1.0

    def test_empty_cameras_rejected(self):
        with pytest.raises(ValueError):
            sample_distillation_poses([], 4, seed=0)


class TestManifest:
    def test_focal_formula(self, tmp_path):
        doc = {
            "camera_angle_x": np.pi / 2,
            "frames": [{"file_path": "./r_0", "transform_matrix": np.eye(4).tolist()}],
        }
        path = tmp_path / "t.json"
        path.write_text(json.dumps(doc))
        cams = load_transforms_manifest(path, default_size=(800, 800))
        assert cams[0].fx == pytest.approx(400.0)

    def test_identity_transform_looks_down_minus_z(self, tmp_path):
        doc = {
            "camera_angle_x": 0.8,
            "w": 64,
            "h": 64,
            "frames": [{"file_path": "./r_0", "transform_matrix": np.eye(4).tolist()}],
        }
        path = tmp_path / "t.json"
        path.write_text(json.dumps(doc))
        cam = load_transforms_manifest(path)[0]
        assert np.allclose(cam.center, 0.0)
        assert np.allclose(cam.forward, (0.0, 0.0, -1.0))

    def test_order_preserved_and_round_trip(self, tmp_path, small_cams):
        path = tmp_path / "cams.json"
        save_transforms_manifest(path, small_cams, scene_hash="abc123")
        back = load_transforms_manifest(path)
        assert len(back) == len(small_cams)
        for a, b in zip(small_cams, back):
            assert np.allclose(a.center, b.center, atol=1e-12)
            assert np.allclose(a.R, b.R, atol=1e-12)
        assert json.loads(path.read_text())["scene_hash"] == "abc123"

    def test_malformed_document(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValueError, match="malformed"):
            load_transforms_manifest(path)

    def test_bad_matrix_rejected(self, tmp_path):
        doc = {
            "camera_angle_x": 0.8,
            "frames": [{"file_path": "./r_0", "transform_matrix": [[1, 2], [3, 4]]}],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="4x4"):
            load_transforms_manifest(path)

    def test_non_rotation_rejected(self, tmp_path):
        m = np.eye(4)
        m[0, 0] = 3.0
        doc = {"camera_angle_x": 0.8, "frames": [{"file_path": "x", "transform_matrix": m.tolist()}]}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="orthonormal"):
            load_transforms_manifest(path)


class TestCameraType:
    def test_rotation_validated(self):
        with pytest.raises(ValueError):
            Camera(10.0, 10.0, 5.0, 5.0, np.eye(3) * 2.0, np.zeros(3), 10, 10)

    def test_reflection_rejected(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            Camera(10.0, 10.0, 5.0, 5.0, R, np.zeros(3), 10, 10)

    def test_principal_point_inside(self):
        with pytest.raises(ValueError):
            Camera(10.0, 10.0, 20.0, 5.0, np.eye(3), np.zeros(3), 10, 10)

    def test_pose_bounds_validation(self):
        with pytest.raises(ValueError):
            PoseBounds(0.0, 1.0, 0.0, 1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            PoseBounds(1.0, 0.5, 0.0, 1.0, 0.0, 1.0)
