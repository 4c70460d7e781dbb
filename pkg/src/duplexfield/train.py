"""Two-phase optimization of vertex features and network parameters.

Phase 1 supervises with teacher renders at sampled distillation poses;
phase 2 fine-tunes on the training poses (ground-truth images or teacher
re-renders). Every iteration uses exactly one view, renders the full frame
(or a margin-padded patch), backpropagates to the network parameters and
the per-vertex features of every layer, and applies a bias-corrected Adam
step under an exponential learning-rate schedule. Geometry is frozen.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .camera import sample_distillation_poses
from .field import render_field_image
from .geometry import DuplexGeometry
from .hashing import canonical_hash, pose_hash
from .raster import (
    build_layer_bvhs,
    rasterize,
    rasterize_window,
    scatter_feature_gradients_batch,
)
from .shading import ShadingNet, assemble_input, net_backward, net_forward


class NumericalError(RuntimeError):
    """Optimization produced a non-finite quantity."""


FINETUNE_TARGETS = ("ground-truth", "teacher")


@dataclass
class TrainConfig:
    total_iters: int
    phase1_fraction: float = 0.5
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patch_size: int = 0  # 0 renders the full frame
    seed: int = 0
    background: tuple = (1.0, 1.0, 1.0)
    finetune_target: str = "ground-truth"
    distill_count: int = 1000  # 0 disables phase 1 (the no-distillation ablation)
    oracle_steps: int = 192  # teacher quadrature steps per ray
    checkpoint_every: int = 0  # 0: only the final checkpoint

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        if not (0.0 < self.phase1_fraction < 1.0):
            raise ValueError("phase1_fraction must lie strictly in (0, 1)")
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")
        if self.finetune_target not in FINETUNE_TARGETS:
            raise ValueError(f"finetune_target must be one of {FINETUNE_TARGETS}")
        self.background = tuple(float(c) for c in self.background)

    @property
    def phase1_iters(self) -> int:
        if self.distill_count == 0:
            return 0
        return int(self.total_iters * self.phase1_fraction)

    def config_hash(self) -> str:
        return canonical_hash(asdict(self))


def lr_schedule(iteration: int, config: TrainConfig) -> float:
    """Exponential decay from lr_start at iteration 0 to lr_end at the last."""
    if not (0 <= iteration < config.total_iters):
        raise ValueError("iteration outside the configured range")
    if config.total_iters == 1:
        return config.lr_start
    frac = iteration / (config.total_iters - 1)
    return config.lr_start * (config.lr_end / config.lr_start) ** frac


@dataclass
class OptimizerState:
    """Adam moment accumulators, one pair per trainable tensor."""

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict, state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in tensor {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def mse_loss(pred: np.ndarray, target: np.ndarray, miss_mask=None, background=None):
    """Mean squared error and its gradient image.

    Pixels where every layer missed are composited with the background
    before comparison (their gradient is therefore zero).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if miss_mask is not None:
        pred = np.where(miss_mask[..., None], np.asarray(background), pred)
    diff = pred - target
    count = diff.size
    loss = float(np.mean(diff**2))
    grad = 2.0 * diff / count
    if miss_mask is not None:
        grad[miss_mask] = 0.0
    return loss, grad


# --- model parameters as flat dicts -------------------------------------------


def trainable_params(duplex: DuplexGeometry, net: ShadingNet) -> dict:
    params = {f"layer{i}.features": fm.features for i, fm in enumerate(duplex.layers)}
    for j, layer in enumerate(net.layers):
        params[f"net.{j}.weights"] = layer.weights
        params[f"net.{j}.bias"] = layer.bias
    return params


def render_prediction(duplex, net, cam, bvhs=None, background=(1.0, 1.0, 1.0)):
    """Full student render: rasterize, shade, composite misses over the
    background. Returns (image, gbuffer)."""
    gbuf = rasterize(duplex, cam, bvhs)
    x = assemble_input(gbuf, net)
    out, _ = net_forward(x, net, want_cache=False)
    img = np.where(gbuf.any_hit()[..., None], out, np.asarray(background))
    return img, gbuf


# --- teacher target cache ------------------------------------------------------


class TargetCache:
    """Disk/memory cache of oracle renders keyed by scene, pose, resolution
    and quadrature depth. Values are stored at full precision so cached and
    fresh runs produce bit-identical training logs."""

    def __init__(self, field, n_steps, background, cache_dir=None, scene_hash=None):
        self.field = field
        self.n_steps = n_steps
        self.background = tuple(background)
        self.cache_dir = cache_dir
        self.scene_hash = scene_hash or "adhoc"
        self._memory = {}
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)

    def _key(self, cam) -> str:
        return "_".join(
            [
                self.scene_hash,
                pose_hash(cam),
                f"{cam.width}x{cam.height}",
                str(self.n_steps),
                canonical_hash(list(self.background)),
            ]
        )

    def get(self, cam) -> np.ndarray:
        key = self._key(cam)
        if key in self._memory:
            return self._memory[key]
        if self.cache_dir:
            path = os.path.join(self.cache_dir, key + ".npy")
            if os.path.exists(path):
                img = np.load(path)
                self._memory[key] = img
                return img
        img = render_field_image(self.field, cam, self.n_steps, self.background)
        if self.cache_dir:
            np.save(os.path.join(self.cache_dir, key + ".npy"), img)
        self._memory[key] = img
        return img


# --- checkpoints ----------------------------------------------------------------


@dataclass
class Checkpoint:
    features: list  # per-layer (V, F) arrays
    net_weights: list  # per-layer weights
    net_biases: list
    adam_m: dict
    adam_v: dict
    adam_step_count: int
    iteration: int
    config_hash: str
    rng_state: dict

    def save(self, path) -> None:
        arrays = {}
        for i, f in enumerate(self.features):
            arrays[f"features_{i}"] = f
        for j, (w, b) in enumerate(zip(self.net_weights, self.net_biases)):
            arrays[f"net_w_{j}"] = w
            arrays[f"net_b_{j}"] = b
        for name, a in self.adam_m.items():
            arrays["adam_m." + name] = a
        for name, a in self.adam_v.items():
            arrays["adam_v." + name] = a
        meta = {
            "version": 1,
            "n_feature_layers": len(self.features),
            "n_net_layers": len(self.net_weights),
            "adam_step_count": self.adam_step_count,
            "iteration": self.iteration,
            "config_hash": self.config_hash,
            "rng_state": self.rng_state,
        }
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **arrays)

    @classmethod
    def load(cls, path, expect_config_hash=None) -> "Checkpoint":
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("version") != 1:
                raise ValueError(f"{path}: unsupported checkpoint version")
            if expect_config_hash and meta["config_hash"] != expect_config_hash:
                raise ValueError(
                    f"{path}: checkpoint was produced under a different config "
                    f"({meta['config_hash']} != {expect_config_hash})"
                )
            features = [z[f"features_{i}"] for i in range(meta["n_feature_layers"])]
            weights = [z[f"net_w_{j}"] for j in range(meta["n_net_layers"])]
            biases = [z[f"net_b_{j}"] for j in range(meta["n_net_layers"])]
            adam_m = {
                k[len("adam_m."):]: z[k] for k in z.files if k.startswith("adam_m.")
            }
            adam_v = {
                k[len("adam_v."):]: z[k] for k in z.files if k.startswith("adam_v.")
            }
        return cls(
            features, weights, biases, adam_m, adam_v,
            meta["adam_step_count"], meta["iteration"], meta["config_hash"],
            meta["rng_state"],
        )

    def apply_to(self, duplex: DuplexGeometry, net: ShadingNet) -> None:
        for fm, f in zip(duplex.layers, self.features):
            fm.features[...] = f
        for layer, w, b in zip(net.layers, self.net_weights, self.net_biases):
            layer.weights[...] = w
            layer.bias[...] = b


def _snapshot(duplex, net, state, iteration, config_hash, rng) -> Checkpoint:
    return Checkpoint(
        features=[fm.features.copy() for fm in duplex.layers],
        net_weights=[l.weights.copy() for l in net.layers],
        net_biases=[l.bias.copy() for l in net.layers],
        adam_m={k: v.copy() for k, v in state.m.items()},
        adam_v={k: v.copy() for k, v in state.v.items()},
        adam_step_count=state.step,
        iteration=iteration,
        config_hash=config_hash,
        rng_state=rng.bit_generator.state,
    )


@dataclass
class LossEntry:
    iteration: int
    phase: int
    lr: float
    loss: float


def write_loss_log(path, entries) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "phase", "lr", "loss"])
        for e in entries:
            writer.writerow([e.iteration, e.phase, f"{e.lr:.10g}", f"{e.loss:.10g}"])


# --- the training loop -----------------------------------------------------------


def train(
    field,
    duplex: DuplexGeometry,
    net: ShadingNet,
    train_cams: list,
    config: TrainConfig,
    train_images: list = None,
    target_cache: TargetCache = None,
    checkpoint_path=None,
    resume_from: Checkpoint = None,
    progress=None,
    stop_after: int = None,
):
    """Optimize vertex features and network parameters.

    Returns (final Checkpoint, list of LossEntry). ``train_images``
    overrides ground-truth targets for phase 2; otherwise the oracle
    renders them. A non-finite loss aborts with the last saved checkpoint
    left on disk. ``stop_after`` interrupts the run at that iteration
    (checkpoint still written); resuming from the checkpoint replays the
    remaining iterations bit-exactly.
    """
    if config.finetune_target == "ground-truth" and train_images is not None:
        if len(train_images) != len(train_cams):
            raise ValueError("one ground-truth image per training camera required")

    cfg_hash = config.config_hash()
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(seeds[0])
    if target_cache is None:
        target_cache = TargetCache(field, config.oracle_steps, config.background)

    distill_cams = []
    if config.distill_count > 0:
        distill_cams = sample_distillation_poses(
            train_cams, config.distill_count, seeds[1]
        )

    bvhs = build_layer_bvhs(duplex)
    params = trainable_params(duplex, net)
    state = OptimizerState.for_params(params)
    start_iter = 0
    if resume_from is not None:
        if resume_from.config_hash != cfg_hash:
            raise ValueError("checkpoint config hash does not match this config")
        resume_from.apply_to(duplex, net)
        params = trainable_params(duplex, net)
        state = OptimizerState(
            m={k: v.copy() for k, v in resume_from.adam_m.items()},
            v={k: v.copy() for k, v in resume_from.adam_v.items()},
            step=resume_from.adam_step_count,
        )
        rng.bit_generator.state = resume_from.rng_state
        start_iter = resume_from.iteration

    entries = []
    phase1 = config.phase1_iters
    last_ckpt = None
    end_iter = config.total_iters if stop_after is None else min(stop_after, config.total_iters)
    for it in range(start_iter, end_iter):
        phase = 1 if it < phase1 else 2
        if phase == 1:
            cam_pool = distill_cams
        else:
            cam_pool = train_cams
        view = int(rng.integers(len(cam_pool)))
        cam = cam_pool[view]

        if phase == 2 and config.finetune_target == "ground-truth" and train_images is not None:
            target = train_images[view]
        else:
            target = target_cache.get(cam)

        lr = lr_schedule(it, config)
        loss = _train_step(duplex, net, cam, target, bvhs, params, state, lr, config, rng)
        entries.append(LossEntry(it, phase, lr, loss))
        if progress is not None:
            progress(entries[-1])

        if not np.isfinite(loss):
            raise NumericalError(
                f"loss became non-finite at iteration {it}; "
                + ("last checkpoint retained" if last_ckpt else "no checkpoint written")
            )
        if checkpoint_path and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            last_ckpt = _snapshot(duplex, net, state, it + 1, cfg_hash, rng)
            last_ckpt.save(checkpoint_path)

    final = _snapshot(duplex, net, state, end_iter, cfg_hash, rng)
    if checkpoint_path:
        final.save(checkpoint_path)
    return final, entries


def _train_step(duplex, net, cam, target, bvhs, params, state, lr, config, rng):
    margin = net.footprint_margin
    p = config.patch_size
    if p > 0 and (p < cam.width or p < cam.height):
        # margin-padded patch, clipped to the frame so zero padding matches
        # full-frame convolution behavior at the image border
        x0 = int(rng.integers(0, cam.width - p + 1))
        y0 = int(rng.integers(0, cam.height - p + 1))
        rw = min(p + margin, cam.width - x0)
        rh = min(p + margin, cam.height - y0)
        gbuf = rasterize_window(duplex, cam, x0, y0, rw, rh, bvhs)
        target_view = target[y0 : y0 + p, x0 : x0 + p]
        loss_region = (slice(0, p), slice(0, p))
    else:
        gbuf = rasterize(duplex, cam, bvhs)
        target_view = target
        loss_region = None

    x = assemble_input(gbuf, net)
    out, cache = net_forward(x, net)
    miss = ~gbuf.any_hit()

    if loss_region is None:
        loss, dpred = mse_loss(out, target_view, miss, config.background)
    else:
        loss, dcore = mse_loss(
            out[loss_region], target_view, miss[loss_region], config.background
        )
        dpred = np.zeros_like(out)
        dpred[loss_region] = dcore

    n_feat_channels = duplex.layer_count * duplex.feature_dim
    grads_net, din = net_backward(cache, net, dpred, input_grad_channels=n_feat_channels)
    grads = {}
    for j, (dw, db) in enumerate(grads_net):
        grads[f"net.{j}.weights"] = dw
        grads[f"net.{j}.bias"] = db
    for li, fm in enumerate(duplex.layers):
        sl = net.layout.slice_of(f"features{li}")
        hit = gbuf.hit[li].astype(bool)
        upstream = din[..., sl][hit]
        grads[f"layer{li}.features"] = scatter_feature_gradients_batch(
            len(fm.mesh.vertices),
            fm.mesh.triangles,
            gbuf.tri[li][hit],
            gbuf.bary[li][hit],
            upstream,
        )
    adam_step(
        params, grads, state, lr,
        beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps,
    )
    return loss
