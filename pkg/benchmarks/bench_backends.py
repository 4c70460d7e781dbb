"""Compare the numba kernels against the pure-numpy fallback paths.

Covers the two hot loops (BVH ray casting, convolution forward/backward)
plus an end-to-end frame render. Run:

    python benchmarks/bench_backends.py [--size 256] [--grid 96] [--repeat 5]
"""

import argparse
import time

import numpy as np

from duplexfield import backend
from duplexfield.camera import spherical_to_camera
from duplexfield.field import bake_grid, make_scene
from duplexfield.geometry import extract_duplex
from duplexfield.raster import build_layer_bvhs, rasterize
from duplexfield.shading import assemble_input, init_net, net_backward, net_forward, preset_spec
from duplexfield.train import render_prediction


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--grid", type=int, default=96)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--numpy-size", type=int, default=64,
                    help="frame size for the numpy rasterizer (brute force is slow)")
    args = ap.parse_args()

    scene = make_scene("glossy-sphere")
    grid = bake_grid(scene, args.grid)
    duplex = extract_duplex(grid, [1e-4, 1e-2], feature_dim=8, seed=0)
    net = init_net(preset_spec("compact"), seed=1)
    bvhs = build_layer_bvhs(duplex)
    n_tris = sum(len(fm.mesh.triangles) for fm in duplex.layers)

    def cam_for(size):
        fx = 1.1 * size
        return spherical_to_camera(
            (2.7, 1.2, 0.5), (fx, fx, size / 2.0, size / 2.0), (size, size)
        )

    cam = cam_for(args.size)
    cam_np = cam_for(args.numpy_size)

    print(f"duplex: {n_tris} triangles | frame {args.size}x{args.size} | "
          f"threads {backend.num_threads()}")
    rows = []

    for name in ("numba", "numpy"):
        backend.set_backend(name)
        c = cam if name == "numba" else cam_np
        gbuf = rasterize(duplex, c, bvhs)  # warm (jit compile on numba)
        x = assemble_input(gbuf, net)
        out, cache = net_forward(x, net)
        dout = np.full_like(out, 1e-3)
        net_backward(cache, net, dout)

        t_raster = best_of(lambda: rasterize(duplex, c, bvhs), args.repeat)
        t_fwd = best_of(lambda: net_forward(x, net, want_cache=False), args.repeat)
        t_bwd = best_of(lambda: net_backward(cache, net, dout), args.repeat)
        t_frame = best_of(lambda: render_prediction(duplex, net, c, bvhs), args.repeat)
        label = f"{name} ({c.width}x{c.height})"
        rows.append((label, t_raster, t_fwd, t_bwd, t_frame))

    backend.set_backend("numba")
    print(f"{'backend':<18}{'raster':>10}{'conv fwd':>10}{'conv bwd':>10}{'frame':>10}")
    for label, *ts in rows:
        print(f"{label:<18}" + "".join(f"{t * 1000:>9.1f}m" for t in ts))
    print("(numpy rasterization scans all triangles per ray; rendered smaller "
          "by default, see --numpy-size)")


if __name__ == "__main__":
    main()
