import numpy as np
import pytest

from duplexfield import backend
from duplexfield.camera import spherical_to_camera
from duplexfield.field import Ray
from duplexfield.geometry import DuplexGeometry, FeatureMesh, TriangleMesh, attach_features
from duplexfield.raster import (
    Hit,
    build_bvh,
    build_layer_bvhs,
    intersect,
    intersect_brute,
    interpolate_feature,
    interpolate_features_batch,
    rasterize,
    rasterize_window,
    scatter_feature_gradient,
    scatter_feature_gradients_batch,
)

INTR = (70.0, 70.0, 32.0, 32.0)


def cam_at(rtp, size):
    fx = 1.1 * size
    return spherical_to_camera(rtp, (fx, fx, size / 2.0, size / 2.0), (size, size))


def single_triangle():
    return TriangleMesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]]),
    )


def random_mesh(n_tris, seed, spread=1.0):
    rng = np.random.default_rng(seed)
    base = rng.uniform(-spread, spread, (n_tris, 3))
    verts = (base[:, None, :] + 0.2 * rng.standard_normal((n_tris, 3, 3))).reshape(-1, 3)
    tris = np.arange(3 * n_tris, dtype=np.int32).reshape(-1, 3)
    return TriangleMesh(verts, tris)


class TestBVHBuild:
    def test_single_triangle_is_leaf(self):
        bvh = build_bvh(single_triangle())
        assert len(bvh.child) == 1
        assert bvh.child[0] == -1
        assert bvh.count[0] == 1

    def test_root_box_is_mesh_bbox(self):
        mesh = random_mesh(200, 0)
        bvh = build_bvh(mesh)
        lo, hi = mesh.bbox()
        assert np.allclose(bvh.bmin[0], lo)
        assert np.allclose(bvh.bmax[0], hi)

    def test_every_triangle_once(self):
        mesh = random_mesh(333, 1)
        bvh = build_bvh(mesh)
        assert np.array_equal(np.sort(bvh.tri_ids), np.arange(333))

    def test_parent_contains_children(self):
        mesh = random_mesh(128, 2)
        bvh = build_bvh(mesh)
        for i, c in enumerate(bvh.child):
            if c >= 0:
                for k in (c, c + 1):
                    assert np.all(bvh.bmin[i] <= bvh.bmin[k] + 1e-12)
                    assert np.all(bvh.bmax[i] >= bvh.bmax[k] - 1e-12)

    def test_leaf_size_bound(self):
        mesh = random_mesh(500, 3)
        bvh = build_bvh(mesh)
        leaf = bvh.child == -1
        assert bvh.count[leaf].max() <= 4

    def test_empty_mesh_rejected(self):
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
        with pytest.raises(ValueError):
            build_bvh(empty)

    def test_deterministic(self):
        mesh = random_mesh(100, 4)
        a, b = build_bvh(mesh), build_bvh(mesh)
        assert np.array_equal(a.tri_ids, b.tri_ids)
        assert np.array_equal(a.bmin, b.bmin)


class TestIntersect:
    def test_centroid_barycentrics(self):
        mesh = single_triangle()
        bvh = build_bvh(mesh)
        centroid = mesh.vertices.mean(axis=0)
        ray = Ray(centroid + [0, 0, 2.0], (0, 0, -1.0), 0.0, 10.0)
        hit = intersect(bvh, mesh, ray)
        assert hit is not None
        assert np.allclose(hit.bary, 1.0 / 3.0, atol=1e-12)
        assert hit.t == pytest.approx(2.0, abs=1e-12)

    def test_parallel_ray_misses(self):
        mesh = single_triangle()
        bvh = build_bvh(mesh)
        ray = Ray((0.2, 0.2, 1.0), (1.0, 0.0, 0.0), 0.0, 10.0)
        assert intersect(bvh, mesh, ray) is None

    def test_back_face_hit(self):
        mesh = single_triangle()
        bvh = build_bvh(mesh)
        ray = Ray((0.2, 0.2, -1.0), (0.0, 0.0, 1.0), 0.0, 10.0)
        assert intersect(bvh, mesh, ray) is not None

    def test_nearest_of_stacked_triangles(self):
        v = np.array(
            [
                [0, 0, 1.0], [1, 0, 1.0], [0, 1, 1.0],
                [0, 0, 2.0], [1, 0, 2.0], [0, 1, 2.0],
            ]
        )
        mesh = TriangleMesh(v, np.array([[3, 4, 5], [0, 1, 2]]))
        bvh = build_bvh(mesh)
        ray = Ray((0.2, 0.2, 0.0), (0.0, 0.0, 1.0), 0.0, 10.0)
        hit = intersect(bvh, mesh, ray)
        assert hit.tri == 1  # nearer plane z=1 holds triangle index 1
        assert hit.t == pytest.approx(1.0, abs=1e-12)

    def test_window_respected(self):
        mesh = single_triangle()
        bvh = build_bvh(mesh)
        ray = Ray((0.2, 0.2, 1.0), (0.0, 0.0, -1.0), 0.0, 0.5)
        assert intersect(bvh, mesh, ray) is None

    @pytest.mark.parametrize("n_tris,seed", [(50, 5), (400, 6), (1000, 7)])
    def test_bvh_agrees_with_brute_force(self, n_tris, seed):
        mesh = random_mesh(n_tris, seed)
        bvh = build_bvh(mesh)
        rng = np.random.default_rng(seed + 100)
        hits = 0
        for k in range(300):
            o = rng.uniform(-2.0, 2.0, 3)
            if k % 2:  # aim at a random vertex so hits are plentiful
                d = mesh.vertices[rng.integers(len(mesh.vertices))] - o
            else:
                d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            ray = Ray(o, d, 0.0, 50.0)
            a = intersect(bvh, mesh, ray)
            b = intersect_brute(mesh, ray)
            assert (a is None) == (b is None)
            if a is not None:
                hits += 1
                assert a.tri == b.tri
                assert abs(a.t - b.t) <= 1e-9
                assert np.allclose(a.bary, b.bary, atol=1e-9)
        assert hits > 20


class TestRasterize:
    def test_camera_facing_away(self, sphere_duplex):
        from duplexfield.camera import look_at_camera

        cam = cam_at((4.0, 1.2, 0.3), 16)
        # same position, optical axis pointing away from the scene
        away = look_at_camera(
            cam.center, cam.intrinsics, (16, 16), target=2.0 * cam.center
        )
        gbuf = rasterize(sphere_duplex, away)
        assert gbuf.hit.sum() == 0
        assert np.all(gbuf.feature == 0.0)
        assert np.all(gbuf.position == 0.0)
        assert np.all(np.isinf(gbuf.depth))

    def test_double_hit_pixels_ordered_outer_first(self, sphere_duplex):
        cam = spherical_to_camera((2.7, 1.2, 0.5), INTR, (64, 64))
        gbuf = rasterize(sphere_duplex, cam)
        both = gbuf.hit.all(axis=0)
        assert both.sum() > 100
        assert np.all(gbuf.depth[0][both] < gbuf.depth[1][both])

    def test_grazing_rays_outer_only_is_permitted(self, sphere_duplex):
        cam = spherical_to_camera((2.7, 1.2, 0.5), INTR, (64, 64))
        gbuf = rasterize(sphere_duplex, cam)
        outer_only = (gbuf.hit[0] == 1) & (gbuf.hit[1] == 0)
        assert outer_only.sum() > 0

    def test_reprojection_recovers_pixel_center(self, sphere_duplex):
        from duplexfield.camera import project

        cam = spherical_to_camera((2.7, 1.0, -0.4), INTR, (64, 64))
        gbuf = rasterize(sphere_duplex, cam)
        ys, xs = np.nonzero(gbuf.hit[0])
        for y, x in list(zip(ys, xs))[::37]:
            u, v, _ = project(cam, gbuf.position[0, y, x])
            assert abs(u - (x + 0.5)) < 1e-4
            assert abs(v - (y + 0.5)) < 1e-4

    def test_position_matches_barycentric_combination(self, sphere_duplex):
        cam = cam_at((2.7, 1.0, 0.8), 32)
        gbuf = rasterize(sphere_duplex, cam)
        mesh = sphere_duplex.layers[0].mesh
        ys, xs = np.nonzero(gbuf.hit[0])
        for y, x in list(zip(ys, xs))[::17]:
            tri = mesh.triangles[gbuf.tri[0, y, x]]
            p = gbuf.bary[0, y, x] @ mesh.vertices[tri]
            assert np.allclose(p, gbuf.position[0, y, x], atol=1e-6)

    def test_deterministic_bit_identical(self, sphere_duplex):
        cam = cam_at((2.7, 1.3, 2.1), 32)
        a = rasterize(sphere_duplex, cam)
        b = rasterize(sphere_duplex, cam)
        assert np.array_equal(a.feature, b.feature)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.bary, b.bary)

    def test_window_matches_full_frame(self, sphere_duplex):
        cam = spherical_to_camera((2.7, 1.2, 0.5), INTR, (64, 64))
        bvhs = build_layer_bvhs(sphere_duplex)
        full = rasterize(sphere_duplex, cam, bvhs)
        win = rasterize_window(sphere_duplex, cam, 10, 20, 30, 25, bvhs)
        assert np.array_equal(win.hit, full.hit[:, 20:45, 10:40])
        assert np.array_equal(win.feature, full.feature[:, 20:45, 10:40])
        assert np.array_equal(win.view_dir, full.view_dir[20:45, 10:40])

    def test_empty_layer_all_miss(self, sphere_duplex):
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
        layers = [sphere_duplex.layers[0], attach_features(empty, 8, seed=0)]
        dup = DuplexGeometry(layers, [1e-4, 1e-2])
        cam = cam_at((2.7, 1.2, 0.5), 16)
        gbuf = rasterize(dup, cam)
        assert gbuf.hit[1].sum() == 0

    def test_backend_parity(self, sphere_duplex):
        cam = cam_at((2.7, 1.1, 1.7), 24)
        a = rasterize(sphere_duplex, cam)
        old = backend.current_backend()
        try:
            backend.set_backend("numpy")
            b = rasterize(sphere_duplex, cam)
        finally:
            backend.set_backend(old)
        assert np.array_equal(a.hit, b.hit)
        assert np.array_equal(a.tri, b.tri)
        assert np.allclose(a.depth[np.isfinite(a.depth)], b.depth[np.isfinite(b.depth)], atol=1e-9)
        assert np.allclose(a.bary, b.bary, atol=1e-9)


class TestFeatureInterpolation:
    def test_vertex_selects_its_feature(self, sphere_duplex):
        fm = sphere_duplex.layers[0]
        hit = Hit(1.0, 5, np.array([1.0, 0.0, 0.0]))
        f = interpolate_feature(fm, hit)
        assert np.array_equal(f, fm.features[fm.mesh.triangles[5][0]])

    def test_basis_features_average(self):
        mesh = single_triangle()
        fm = FeatureMesh(mesh, np.eye(3))
        hit = Hit(1.0, 0, np.array([1, 1, 1]) / 3.0)
        assert np.allclose(interpolate_feature(fm, hit), 1.0 / 3.0)

    def test_matches_dot_product_oracle(self, sphere_duplex):
        fm = sphere_duplex.layers[0]
        rng = np.random.default_rng(8)
        for _ in range(50):
            tri = int(rng.integers(len(fm.mesh.triangles)))
            b = rng.dirichlet((1.0, 1.0, 1.0))
            hit = Hit(1.0, tri, b)
            got = interpolate_feature(fm, hit)
            vi = fm.mesh.triangles[tri]
            oracle = (
                b[0] * fm.features[vi[0]]
                + b[1] * fm.features[vi[1]]
                + b[2] * fm.features[vi[2]]
            )
            assert np.allclose(got, oracle, atol=1e-12)

    def test_batch_matches_single(self, sphere_duplex):
        fm = sphere_duplex.layers[0]
        rng = np.random.default_rng(9)
        tris = rng.integers(0, len(fm.mesh.triangles), 20)
        barys = rng.dirichlet((1, 1, 1), 20)
        batch = interpolate_features_batch(fm, tris, barys)
        for i in range(20):
            single = interpolate_feature(fm, Hit(1.0, int(tris[i]), barys[i]))
            assert np.allclose(batch[i], single, atol=1e-12)


class TestGradientScatter:
    def test_full_weight_on_one_vertex(self, sphere_duplex):
        fm = sphere_duplex.layers[0]
        grad = np.zeros_like(fm.features)
        g = np.arange(8.0)
        scatter_feature_gradient(grad, fm, Hit(1.0, 3, np.array([1.0, 0, 0])), g)
        v0 = fm.mesh.triangles[3][0]
        assert np.array_equal(grad[v0], g)
        grad[v0] = 0.0
        assert np.all(grad == 0.0)

    def test_gradients_sum_over_hits(self, sphere_duplex):
        fm = sphere_duplex.layers[0]
        grad = np.zeros_like(fm.features)
        hit = Hit(1.0, 3, np.array([0.5, 0.25, 0.25]))
        g = np.ones(8)
        scatter_feature_gradient(grad, fm, hit, g)
        scatter_feature_gradient(grad, fm, hit, g)
        v = fm.mesh.triangles[3]
        assert np.allclose(grad[v[0]], 1.0)
        assert np.allclose(grad[v[1]], 0.5)

    def test_jacobian_matches_finite_differences(self, sphere_duplex):
        fm = sphere_duplex.layers[0]
        rng = np.random.default_rng(10)
        hit = Hit(1.0, 7, rng.dirichlet((1, 1, 1)))
        upstream = rng.standard_normal(8)

        def loss():
            return float(interpolate_feature(fm, hit) @ upstream)

        grad = np.zeros_like(fm.features)
        scatter_feature_gradient(grad, fm, hit, upstream)
        eps = 1e-6
        for v in fm.mesh.triangles[7]:
            for k in range(8):
                old = fm.features[v, k]
                fm.features[v, k] = old + eps
                lp = loss()
                fm.features[v, k] = old - eps
                lm = loss()
                fm.features[v, k] = old
                fd = (lp - lm) / (2 * eps)
                denom = max(abs(fd), abs(grad[v, k]), 1e-12)
                assert abs(fd - grad[v, k]) / denom < 1e-6

    def test_batch_scatter_matches_loop(self, sphere_duplex):
        fm = sphere_duplex.layers[0]
        rng = np.random.default_rng(11)
        n = 40
        tris = rng.integers(0, len(fm.mesh.triangles), n)
        barys = rng.dirichlet((1, 1, 1), n)
        ups = rng.standard_normal((n, 8))
        batch = scatter_feature_gradients_batch(
            len(fm.mesh.vertices), fm.mesh.triangles, tris, barys, ups
        )
        loop = np.zeros_like(fm.features)
        for i in range(n):
            scatter_feature_gradient(loop, fm, Hit(1.0, int(tris[i]), barys[i]), ups[i])
        assert np.allclose(batch, loop, atol=1e-12)


class TestHitType:
    def test_negative_bary_rejected(self):
        with pytest.raises(ValueError):
            Hit(1.0, 0, np.array([-0.5, 0.75, 0.75]))

    def test_bary_sum_checked(self):
        with pytest.raises(ValueError):
            Hit(1.0, 0, np.array([0.5, 0.2, 0.2]))
