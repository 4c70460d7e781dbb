import numpy as np
import pytest

from duplexfield.camera import PoseBounds, sample_poses_in_bounds
from duplexfield.field import Bounds, VolumetricField, bake_grid, make_scene
from duplexfield.geometry import extract_duplex


@pytest.fixture(scope="session")
def ramp_grid():
    return bake_grid(make_scene("radial-ramp"), 64)


@pytest.fixture(scope="session")
def sphere_duplex():
    # radially monotone density: layers are strictly nested spheres
    grid = bake_grid(make_scene("textured-sphere"), 48)
    return extract_duplex(grid, [1e-4, 1e-2], feature_dim=8, seed=3)


@pytest.fixture(scope="session")
def small_cams():
    intr = (70.0, 70.0, 32.0, 32.0)
    bounds = PoseBounds(
        2.4, 3.2, np.deg2rad(30.0), np.deg2rad(150.0), -np.pi, np.pi
    )
    return sample_poses_in_bounds(bounds, intr, (64, 64), 8, seed=11)


def constant_field(sigma, rgb, half_extent=2.0):
    rgb = np.asarray(rgb, dtype=np.float64)
    return VolumetricField(
        "test-constant",
        Bounds.cube(half_extent),
        lambda p: np.full(p.shape[0], sigma),
        lambda p, d: np.tile(rgb, (p.shape[0], 1)),
    )
