"""Command-line driver.

Subcommands cover the whole pipeline: materialize a procedural scene and
its density grid (``scene``), inspect mesh extraction (``extract``),
sample distillation poses (``poses``), generate training-view manifests
(``make-views``), optimize (``train``), bake a bundle (``bake``), render
it (``render``), and score it (``eval``).

Exit codes: 0 success, 2 usage error, 3 data/validation error,
4 numerical failure.
"""

import argparse
import json
import os
import struct
import sys

import numpy as np

from . import backend
from .assets import BundleError, export_bundle, import_bundle, write_sections
from .camera import (
    PoseBounds,
    load_transforms_manifest,
    pose_bounds_of,
    sample_distillation_poses,
    sample_poses_in_bounds,
    save_transforms_manifest,
    spherical_to_camera,
)
from .field import DensityGrid, SCENES, bake_grid, make_scene
from .geometry import extract_duplex
from .hashing import canonical_hash
from .metrics import psnr, ssim
from .raster import build_layer_bvhs, rasterize
from .shading import init_net, preset_spec
from .train import (
    Checkpoint,
    NumericalError,
    TargetCache,
    TrainConfig,
    render_prediction,
    train,
    write_loss_log,
)

RAW_IMAGE_MAGIC = b"DXFIMGF1"
GBUFFER_MAGIC = b"DXFGBUF1"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


# --- image I/O -----------------------------------------------------------------


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image

    data = np.clip(np.asarray(img), 0.0, 1.0)
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    Image.fromarray((data * 255.0 + 0.5).astype(np.uint8)).save(path)


def write_raw_image(path, img: np.ndarray) -> None:
    """f32 RGB dump: magic, u32 width, u32 height, row-major pixels."""
    img = np.asarray(img, dtype="<f4")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(RAW_IMAGE_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(img.tobytes())


def read_raw_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(8) != RAW_IMAGE_MAGIC:
            raise ValueError(f"{path}: not a raw image dump")
        w, h = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(), dtype="<f4")
    return data.reshape(h, w, 3).astype(np.float64)


def dump_gbuffer(path, gbuf) -> None:
    """Sectioned G-buffer dump consumed by the viewer parity harness."""
    meta = {
        "width": gbuf.width,
        "height": gbuf.height,
        "layer_count": gbuf.layer_count,
        "feature_dim": gbuf.feature_dim,
    }
    sections = {"manifest": json.dumps(meta).encode()}
    for li in range(gbuf.layer_count):
        sections[f"feature{li}"] = np.ascontiguousarray(gbuf.feature[li], "<f4").tobytes()
        sections[f"position{li}"] = np.ascontiguousarray(gbuf.position[li], "<f4").tobytes()
        dep = gbuf.depth[li].copy()
        dep[~np.isfinite(dep)] = 0.0
        sections[f"depth{li}"] = np.ascontiguousarray(dep, "<f4").tobytes()
    sections["mask"] = np.ascontiguousarray(gbuf.hit).tobytes()
    sections["view_dir"] = np.ascontiguousarray(gbuf.view_dir, "<f4").tobytes()
    write_sections(path, sections, GBUFFER_MAGIC, 1)


# --- run configuration -----------------------------------------------------------


DEFAULT_CONFIG = {
    "scene": "glossy-sphere",
    "grid_resolution": 64,
    "thresholds": [1e-4, 1e-2],
    "min_component_diameter_voxels": 3.0,
    "net": "compact",
    "feature_seed": 0,
    "net_seed": 1,
    "oracle_steps": 64,
    "background": [1.0, 1.0, 1.0],
    "views": {
        "count": 64,
        "width": 128,
        "height": 128,
        "fov_x_deg": 49.1,
        "r": [2.4, 3.2],
        "theta_deg": [30.0, 150.0],
        "phi_deg": [-180.0, 180.0],
        "seed": 101,
    },
    "train": {
        "total_iters": 5000,
        "phase1_fraction": 0.5,
        "lr_start": 1e-3,
        "lr_end": 1e-5,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "patch_size": 0,
        "seed": 0,
        "finetune_target": "ground-truth",
        "distill_count": 1000,
        "checkpoint_every": 0,
    },
    "out_dir": "runs/run",
}


def load_run_config(path=None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path:
        with open(path) as f:
            user = json.load(f)
        _merge(cfg, user)
    return cfg


def _merge(base: dict, extra: dict) -> None:
    for k, v in extra.items():
        if k not in base:
            raise ValueError(f"unknown config key {k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ValueError(f"config key {k!r} must be an object")
            _merge(base[k], v)
        else:
            base[k] = v


def scene_descriptor(cfg: dict) -> dict:
    desc = {
        "scene": cfg["scene"],
        "grid_resolution": cfg["grid_resolution"],
        "oracle_steps": cfg["oracle_steps"],
        "background": cfg["background"],
    }
    desc["scene_hash"] = canonical_hash(desc)
    return desc


def make_view_cams(view_cfg: dict):
    fov = np.deg2rad(view_cfg["fov_x_deg"])
    w, h = int(view_cfg["width"]), int(view_cfg["height"])
    fx = 0.5 * w / np.tan(0.5 * fov)
    intr = (fx, fx, w / 2.0, h / 2.0)
    bounds = PoseBounds(
        view_cfg["r"][0],
        view_cfg["r"][1],
        np.deg2rad(view_cfg["theta_deg"][0]),
        np.deg2rad(view_cfg["theta_deg"][1]),
        np.deg2rad(view_cfg["phi_deg"][0]),
        np.deg2rad(view_cfg["phi_deg"][1]),
    )
    return sample_poses_in_bounds(
        bounds, intr, (w, h), int(view_cfg["count"]), view_cfg["seed"]
    )


def build_model(cfg: dict):
    """Deterministically reconstruct (field, grid, duplex, net) from a config."""
    field = make_scene(cfg["scene"])
    grid = bake_grid(field, cfg["grid_resolution"])
    layer_count = len(cfg["thresholds"])
    spec = preset_spec(cfg["net"], layer_count=layer_count)
    duplex = extract_duplex(
        grid,
        cfg["thresholds"],
        min_diameter=_min_diameter(cfg, grid),
        feature_dim=spec["feature_dim"],
        seed=cfg["feature_seed"],
    )
    net = init_net(spec, seed=cfg["net_seed"])
    return field, grid, duplex, net


def _min_diameter(cfg, grid) -> float:
    return cfg["min_component_diameter_voxels"] * float(np.linalg.norm(grid.voxel_size))


# --- subcommands -------------------------------------------------------------------


def cmd_scene(args) -> int:
    cfg = load_run_config(args.config)
    if args.scene:
        cfg["scene"] = args.scene
    if args.resolution:
        cfg["grid_resolution"] = args.resolution
    if cfg["scene"] not in SCENES:
        raise ValueError(f"unknown scene {cfg['scene']!r}; available: {sorted(SCENES)}")
    field = make_scene(cfg["scene"])
    grid = bake_grid(field, cfg["grid_resolution"])
    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    grid.save(args.out)
    desc = scene_descriptor(cfg)
    desc_path = args.out + ".json"
    with open(desc_path, "w") as f:
        json.dump(desc, f, indent=1)
    lo, hi = grid.value_range()
    print(
        f"scene {cfg['scene']}: grid {grid.resolution} densities [{lo:.4g}, {hi:.4g}] "
        f"-> {args.out} (descriptor {desc_path})"
    )
    return EXIT_OK


def cmd_extract(args) -> int:
    grid = DensityGrid.load(args.grid)
    thresholds = [float(t) for t in args.thresholds.split(",")]
    duplex = extract_duplex(
        grid,
        thresholds,
        min_diameter=args.min_diameter,
        feature_dim=args.feature_dim,
        seed=args.seed,
    )
    print(f"{duplex.layer_count} layers:")
    for iso, fm in zip(duplex.thresholds, duplex.layers):
        print(
            f"  iso {iso:g}: {len(fm.mesh.vertices)} vertices, "
            f"{len(fm.mesh.triangles)} triangles"
        )
    if args.obj:
        for i, fm in enumerate(duplex.layers):
            path = f"{args.obj}_layer{i}.obj"
            fm.mesh.save_obj(path)
            print(f"  wrote {path}")
    return EXIT_OK


def cmd_poses(args) -> int:
    train_cams = load_transforms_manifest(args.cameras_in)
    cams = sample_distillation_poses(train_cams, args.count, args.poses_seed)
    with open(args.cameras_in) as f:
        scene_hash = json.load(f).get("scene_hash")
    save_transforms_manifest(args.out, cams, scene_hash=scene_hash)
    print(f"wrote {len(cams)} distillation poses -> {args.out}")
    return EXIT_OK


def cmd_make_views(args) -> int:
    cfg = load_run_config(args.config)
    views = dict(cfg["views"])
    if args.count:
        views["count"] = args.count
    if args.seed is not None:
        views["seed"] = args.seed
    cams = make_view_cams(views)
    save_transforms_manifest(args.out, cams, scene_hash=scene_descriptor(cfg)["scene_hash"])
    print(f"wrote {len(cams)} training views -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.out:
        cfg["out_dir"] = args.out
    if args.iters:
        cfg["train"]["total_iters"] = args.iters
    if args.net:
        cfg["net"] = args.net
    if args.poses_seed is not None:
        cfg["views"]["seed"] = args.poses_seed
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)

    desc = scene_descriptor(cfg)
    cfg["scene_hash"] = desc["scene_hash"]
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(cfg, f, indent=1)
    del cfg["scene_hash"]

    field, grid, duplex, net = build_model(cfg)
    train_cams = make_view_cams(cfg["views"])
    save_transforms_manifest(
        os.path.join(out_dir, "train_cameras.json"), train_cams, desc["scene_hash"]
    )
    tcfg = TrainConfig(oracle_steps=cfg["oracle_steps"],
                       background=tuple(cfg["background"]), **cfg["train"])
    cache = TargetCache(
        field,
        cfg["oracle_steps"],
        cfg["background"],
        cache_dir=os.path.join(out_dir, "targets"),
        scene_hash=desc["scene_hash"],
    )
    ckpt_path = os.path.join(out_dir, "checkpoint.npz")
    ckpt, entries = train(
        field, duplex, net, train_cams, tcfg,
        target_cache=cache, checkpoint_path=ckpt_path,
    )
    write_loss_log(os.path.join(out_dir, "loss.csv"), entries)
    print(
        f"trained {tcfg.total_iters} iterations; final loss {entries[-1].loss:.6g}; "
        f"checkpoint -> {ckpt_path}"
    )
    return EXIT_OK


def cmd_bake(args) -> int:
    cfg = load_run_config(args.config)
    field, grid, duplex, net = build_model(cfg)
    tcfg = TrainConfig(oracle_steps=cfg["oracle_steps"],
                       background=tuple(cfg["background"]), **cfg["train"])
    ckpt = Checkpoint.load(args.checkpoint, expect_config_hash=tcfg.config_hash())
    ckpt.apply_to(duplex, net)
    train_cams = make_view_cams(cfg["views"])
    pb = pose_bounds_of(train_cams)
    desc = scene_descriptor(cfg)
    export_bundle(
        duplex,
        net,
        args.out,
        preset=cfg["net"],
        background=cfg["background"],
        scene_hash=desc["scene_hash"],
        config_hash=tcfg.config_hash(),
        pose_bounds={
            "r": [pb.r_min, pb.r_max],
            "theta": [pb.theta_min, pb.theta_max],
            "phi": [pb.phi_min, pb.phi_max],
        },
        oracle_steps=cfg["oracle_steps"],
    )
    print(f"baked bundle -> {args.out}")
    return EXIT_OK


def _render_cams(args, manifest):
    if args.orbit:
        radius, elev_deg, n = args.orbit.split(",")
        radius, elev_deg, n = float(radius), float(elev_deg), int(n)
        theta = np.deg2rad(90.0 - elev_deg)
        w = args.size
        fov = np.deg2rad(args.fov_deg)
        fx = 0.5 * w / np.tan(0.5 * fov)
        intr = (fx, fx, w / 2.0, w / 2.0)
        return [
            spherical_to_camera((radius, theta, 2.0 * np.pi * k / n), intr, (w, w))
            for k in range(n)
        ]
    if args.cameras:
        cams = load_transforms_manifest(args.cameras)
        if args.frame is not None:
            cams = [cams[args.frame]]
        return cams
    raise ValueError("render needs --orbit or --cameras")


def cmd_render(args) -> int:
    duplex, net, manifest = import_bundle(args.bundle)
    cams = _render_cams(args, manifest)
    bvhs = build_layer_bvhs(duplex)
    bg = tuple(manifest["background"])
    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    multi = len(cams) > 1
    for k, cam in enumerate(cams):
        img, gbuf = render_prediction(duplex, net, cam, bvhs, bg)
        stem = f"{args.out}_{k:04d}" if multi else args.out
        write_png(stem + ".png", img)
        if args.raw:
            write_raw_image(stem + ".f32", img)
        if args.dump_gbuffer:
            dump_gbuffer(stem + ".gbuf", gbuf)
            _debug_gbuffer_pngs(stem, gbuf)
    print(f"rendered {len(cams)} frame(s) -> {args.out}*")
    return EXIT_OK


def _debug_gbuffer_pngs(stem, gbuf) -> None:
    for li in range(gbuf.layer_count):
        depth = gbuf.depth[li]
        finite = np.isfinite(depth)
        vis = np.zeros_like(depth)
        if np.any(finite):
            lo, hi = depth[finite].min(), depth[finite].max()
            span = (hi - lo) or 1.0
            vis[finite] = 1.0 - (depth[finite] - lo) / span
        write_png(f"{stem}_depth{li}.png", vis)
        write_png(f"{stem}_mask{li}.png", gbuf.hit[li].astype(np.float64))
        write_png(f"{stem}_bary{li}.png", gbuf.bary[li])


def cmd_eval(args) -> int:
    duplex, net, manifest = import_bundle(args.bundle)
    cams = load_transforms_manifest(args.cameras)
    with open(args.cameras) as f:
        cam_doc = json.load(f)
    cam_scene_hash = cam_doc.get("scene_hash")
    if cam_scene_hash and manifest.get("scene_hash") and cam_scene_hash != manifest["scene_hash"]:
        raise ValueError(
            "camera manifest scene hash does not match the bundle "
            f"({cam_scene_hash} != {manifest['scene_hash']})"
        )
    scene_name = args.scene
    if scene_name is None and manifest.get("scene_hash"):
        # recover the scene id by matching the recorded descriptor hash
        for name in SCENES:
            trial = {
                "scene": name,
                "grid_resolution": args.grid_resolution,
                "oracle_steps": manifest.get("oracle_steps", DEFAULT_CONFIG["oracle_steps"]),
                "background": manifest["background"],
            }
            if canonical_hash(trial) == manifest["scene_hash"]:
                scene_name = name
                break
    if scene_name is None:
        raise ValueError("cannot identify the oracle scene; pass --scene")
    field = make_scene(scene_name)
    steps = manifest.get("oracle_steps", DEFAULT_CONFIG["oracle_steps"])
    bg = tuple(manifest["background"])
    cache = TargetCache(field, steps, bg, scene_hash=manifest.get("scene_hash"))
    bvhs = build_layer_bvhs(duplex)
    rows = []
    for k, cam in enumerate(cams):
        img, _ = render_prediction(duplex, net, cam, bvhs, bg)
        target = cache.get(cam)
        rows.append((f"frame{k:04d}", psnr(img, target), ssim(img, target)))
    print(f"scene {scene_name}, {len(rows)} views")
    print(f"{'view':<12}{'PSNR (dB)':>12}{'SSIM':>10}")
    for name, p, s in rows:
        print(f"{name:<12}{p:>12.3f}{s:>10.4f}")
    mp = float(np.mean([r[1] for r in rows]))
    ms = float(np.mean([r[2] for r in rows]))
    print(f"{'mean':<12}{mp:>12.3f}{ms:>10.4f}")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("view,psnr,ssim\n")
            for name, p, s in rows:
                f.write(f"{name},{p:.6f},{s:.6f}\n")
            f.write(f"mean,{mp:.6f},{ms:.6f}\n")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="duplexfield",
        description="Two-layer mesh radiance fields: extract, distill, bake, render.",
    )
    p.add_argument("--threads", type=int, default=0, help="cap worker threads (1 = bit-stable)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("scene", help="materialize a procedural scene + density grid")
    sp.add_argument("--config")
    sp.add_argument("--scene", choices=sorted(SCENES))
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_scene)

    sp = sub.add_parser("extract", help="run duplex mesh extraction on a grid file")
    sp.add_argument("grid")
    sp.add_argument("--thresholds", default="1e-4,1e-2")
    sp.add_argument("--feature-dim", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--min-diameter", type=float, default=None)
    sp.add_argument("--obj", help="prefix for per-layer OBJ debug dumps")
    sp.set_defaults(fn=cmd_extract)

    sp = sub.add_parser("poses", help="sample distillation poses from training cameras")
    sp.add_argument("cameras_in")
    sp.add_argument("--count", type=int, default=1000)
    sp.add_argument("--poses-seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_poses)

    sp = sub.add_parser("make-views", help="generate a training-view camera manifest")
    sp.add_argument("--config")
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_make_views)

    sp = sub.add_parser("train", help="run two-phase optimization per a run config")
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--net", choices=["compact", "quality"])
    sp.add_argument("--poses-seed", type=int)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("bake", help="export a checkpoint as a renderable bundle")
    sp.add_argument("--config")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_bake)

    sp = sub.add_parser("render", help="render PNG frames from a bundle")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--cameras", help="camera manifest JSON")
    sp.add_argument("--frame", type=int, help="render a single manifest frame")
    sp.add_argument("--orbit", help="radius,elevation_deg,n_frames")
    sp.add_argument("--size", type=int, default=256, help="orbit frame size")
    sp.add_argument("--fov-deg", type=float, default=49.1, dest="fov_deg")
    sp.add_argument("--out", required=True, help="output stem (''.png appended)")
    sp.add_argument("--raw", action="store_true", help="also dump f32 frames")
    sp.add_argument("--dump-gbuffer", action="store_true")
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("eval", help="PSNR/SSIM table for a bundle vs the oracle")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--cameras", required=True)
    sp.add_argument("--scene", choices=sorted(SCENES))
    sp.add_argument("--grid-resolution", type=int, default=DEFAULT_CONFIG["grid_resolution"])
    sp.add_argument("--csv")
    sp.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        backend.set_num_threads(args.threads)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError, BundleError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
