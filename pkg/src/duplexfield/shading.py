"""Screen-space convolutional shading network.

The network decodes per-pixel G-buffer channels (interpolated layer
features, hit masks, frequency-encoded view direction, optionally encoded
hit positions) into RGB through a short stack of small-kernel
convolutions. Forward and reverse passes are hand-derived; the reverse
pass returns parameter gradients plus the input-tensor gradient whose
feature channels are scattered back to mesh vertices.
"""

from dataclasses import dataclass

import numpy as np

from ._conv_kernels import conv_bwd_input, conv_bwd_weights, conv_fwd
from .raster import GBuffer

ACTIVATIONS = ("relu", "sigmoid", "none")


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray  # (out_ch,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ValueError("weights must be (out, in, kh, kw)")
        kh, kw = self.weights.shape[2:]
        if kh not in (1, 2, 3) or kw not in (1, 2, 3):
            raise ValueError("kernel sides must be 1, 2 or 3")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias must have one entry per output channel")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("parameters must be finite")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


@dataclass(frozen=True)
class InputLayout:
    """Ordered channel groups of the network input tensor."""

    groups: tuple  # of (name, size)

    @property
    def total_channels(self) -> int:
        return sum(size for _, size in self.groups)

    def slice_of(self, name: str) -> slice:
        off = 0
        for g_name, size in self.groups:
            if g_name == name:
                return slice(off, off + size)
            off += size
        raise KeyError(name)


def encoded_dim(levels: int) -> int:
    return 3 + 6 * levels


def make_input_layout(
    layer_count: int, feature_dim: int, pe_view_levels: int, pe_pos_levels: int
) -> InputLayout:
    """Feature channels per layer (outer first), hit masks, encoded view
    direction, then optionally encoded hit positions per layer."""
    groups = [(f"features{i}", feature_dim) for i in range(layer_count)]
    groups.append(("masks", layer_count))
    groups.append(("view_dir", encoded_dim(pe_view_levels)))
    if pe_pos_levels > 0:
        groups.extend(
            (f"position{i}", encoded_dim(pe_pos_levels)) for i in range(layer_count)
        )
    return InputLayout(tuple(groups))


@dataclass
class ShadingNet:
    layers: list
    layout: InputLayout
    pe_view_levels: int
    pe_pos_levels: int

    def __post_init__(self):
        if not self.layers:
            raise ValueError("need at least one layer")
        if self.layers[0].in_channels != self.layout.total_channels:
            raise ValueError(
                f"layout has {self.layout.total_channels} channels but the first "
                f"layer expects {self.layers[0].in_channels}"
            )
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError("layer channel counts must chain")
        last = self.layers[-1]
        if last.out_channels != 3 or last.activation != "sigmoid":
            raise ValueError("final layer must emit 3 sigmoid channels")

    @property
    def footprint_margin(self) -> int:
        """Forward reach of the stacked kernels in pixels."""
        return sum(max(l.kernel) - 1 for l in self.layers)


def positional_encode(v: np.ndarray, levels: int) -> np.ndarray:
    """[v, sin(2^0 v), cos(2^0 v), ..., sin(2^(L-1) v), cos(2^(L-1) v)],
    componentwise, no pi factor. Shape (..., 3) -> (..., 3 + 6 levels)."""
    v = np.asarray(v, dtype=np.float64)
    parts = [v]
    for lv in range(levels):
        s = (2.0**lv) * v
        parts.append(np.sin(s))
        parts.append(np.cos(s))
    return np.concatenate(parts, axis=-1)


def assemble_input(gbuf: GBuffer, net: ShadingNet) -> np.ndarray:
    """Concatenate G-buffer channels into the network input tensor.

    Channel order follows ``net.layout`` and is recorded verbatim in baked
    asset manifests. Missed pixels contribute zero features and masks; the
    encoded view direction is always present.
    """
    expected_layers = sum(1 for n, _ in net.layout.groups if n.startswith("features"))
    if gbuf.layer_count != expected_layers:
        raise ValueError(
            f"G-buffer has {gbuf.layer_count} layers, layout expects {expected_layers}"
        )
    parts = []
    for name, size in net.layout.groups:
        if name.startswith("features"):
            li = int(name[len("features"):])
            feat = gbuf.feature[li]
            if feat.shape[-1] != size:
                raise ValueError("feature dimension does not match layout")
            parts.append(feat)
        elif name == "masks":
            parts.append(np.moveaxis(gbuf.hit, 0, -1).astype(np.float64))
        elif name == "view_dir":
            parts.append(positional_encode(gbuf.view_dir, net.pe_view_levels))
        elif name.startswith("position"):
            li = int(name[len("position"):])
            parts.append(positional_encode(gbuf.position[li], net.pe_pos_levels))
        else:  # pragma: no cover
            raise KeyError(name)
    return np.concatenate(parts, axis=-1)


def _activate(pre: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pre))
    return pre


def _activation_grad(out: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (out > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(out)


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """One convolution layer with activation; output resolution = input."""
    return _activate(conv_fwd(x, layer.weights, layer.bias), layer.activation)


def net_forward(x: np.ndarray, net: ShadingNet, want_cache: bool = True):
    """Run the full stack; returns (H x W x 3 image, cache for backward)."""
    cache = [] if want_cache else None
    cur = x
    for layer in net.layers:
        out = conv_forward(cur, layer)
        if want_cache:
            cache.append((cur, out))
        cur = out
    return cur, cache


def net_backward(cache, net: ShadingNet, d_out: np.ndarray, input_grad_channels: int = None):
    """Exact reverse-mode gradients.

    Returns ([(dW, db) per layer], gradient w.r.t. the input tensor).
    ``input_grad_channels`` truncates the returned input gradient to a
    channel prefix (the feature channels, during training) to skip work.
    """
    if cache is None or len(cache) != len(net.layers):
        raise ValueError("forward cache missing or stale")
    grads = [None] * len(net.layers)
    cur = d_out
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x_in, out = cache[i]
        dpre = np.ascontiguousarray(cur * _activation_grad(out, layer.activation))
        kh, kw = layer.kernel
        dw, db = conv_bwd_weights(dpre, x_in, kh, kw)
        grads[i] = (dw, db)
        limit = input_grad_channels if i == 0 else None
        cur = conv_bwd_input(dpre, layer.weights, x_in.shape[0], x_in.shape[1], limit)
    return grads, cur


# --- architectures ------------------------------------------------------------

PRESETS = {
    # shader-bound config: two 2x2 layers, narrow features
    "compact": {
        "feature_dim": 8,
        "pe_view_levels": 5,
        "pe_pos_levels": 0,
        "hidden": (32,),
        "kernels": (2, 2),
    },
    # offline config: wider, deeper, encodes positions too
    "quality": {
        "feature_dim": 20,
        "pe_view_levels": 10,
        "pe_pos_levels": 10,
        "hidden": (256, 256),
        "kernels": (3, 3, 1),
    },
}


def preset_spec(name: str, layer_count: int = 2, kernel_override: int = None) -> dict:
    """Resolved architecture description for a named preset.

    ``kernel_override`` forces every kernel side (1 gives the pixelwise
    ablation of the same code path).
    """
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    p = dict(PRESETS[name])
    kernels = tuple(p.pop("kernels"))
    hidden = tuple(p.pop("hidden"))
    if kernel_override is not None:
        kernels = (kernel_override,) * len(kernels)
    layout = make_input_layout(
        layer_count, p["feature_dim"], p["pe_view_levels"], p["pe_pos_levels"]
    )
    widths = (layout.total_channels,) + hidden + (3,)
    layers = []
    for i, k in enumerate(kernels):
        layers.append(
            {
                "in_ch": widths[i],
                "out_ch": widths[i + 1],
                "kh": k,
                "kw": k,
                "activation": "sigmoid" if i == len(kernels) - 1 else "relu",
            }
        )
    return {
        "preset": name,
        "layer_count": layer_count,
        "feature_dim": p["feature_dim"],
        "pe_view_levels": p["pe_view_levels"],
        "pe_pos_levels": p["pe_pos_levels"],
        "layers": layers,
    }


def init_net(spec: dict, seed) -> ShadingNet:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases."""
    layout = make_input_layout(
        spec["layer_count"],
        spec["feature_dim"],
        spec["pe_view_levels"],
        spec["pe_pos_levels"],
    )
    rng = np.random.default_rng(seed)
    layers = []
    prev = layout.total_channels
    for ls in spec["layers"]:
        if ls["in_ch"] != prev:
            raise ValueError("layer channel counts do not chain")
        fan_in = ls["kh"] * ls["kw"] * ls["in_ch"]
        lim = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-lim, lim, size=(ls["out_ch"], ls["in_ch"], ls["kh"], ls["kw"]))
        layers.append(ConvLayer(w, np.zeros(ls["out_ch"]), ls["activation"]))
        prev = ls["out_ch"]
    return ShadingNet(layers, layout, spec["pe_view_levels"], spec["pe_pos_levels"])
