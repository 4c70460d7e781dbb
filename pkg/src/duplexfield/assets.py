"""Baked asset serialization.

A bundle is a single little-endian binary file: an 8-byte magic, a format
version, and a table of contents (section name, absolute offset, byte
length, CRC32) followed by the section payloads. The manifest section is
human-readable JSON carrying everything a renderer needs: layer geometry
sizes, the network architecture, the exact input channel layout, encoding
levels, background color, and provenance hashes. Mesh positions, features
and convolution parameters are stored as float32; 2x2 kernels additionally
ship in the texture-friendly packed layout used by shader renderers.
"""

import json
import struct
import zlib

import numpy as np

from .geometry import DuplexGeometry, FeatureMesh, TriangleMesh
from .shading import ConvLayer, ShadingNet, make_input_layout

BUNDLE_MAGIC = b"DXFBNDL1"
BUNDLE_VERSION = 1
MANIFEST_SECTION = "manifest"


class BundleError(ValueError):
    """Malformed, corrupt, or unsupported bundle file."""


# --- generic section container --------------------------------------------------


def write_sections(path, sections: dict, magic: bytes, version: int) -> None:
    """Write named binary sections with a checksummed table of contents."""
    names = list(sections)
    toc_size = len(magic) + 8
    for name in names:
        toc_size += 2 + len(name.encode()) + 8 + 8 + 4
    offset = toc_size
    entries = []
    for name in names:
        payload = sections[name]
        entries.append((name, offset, len(payload), zlib.crc32(payload)))
        offset += len(payload)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", version, len(names)))
        for name, off, length, crc in entries:
            enc = name.encode()
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<QQI", off, length, crc))
        for name in names:
            f.write(sections[name])


def read_sections(path, magic: bytes, max_version: int):
    """Read a section container; verifies magic, version and checksums."""
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(magic)] != magic:
        raise BundleError(f"{path}: bad magic (not a {magic.decode(errors='replace')} file)")
    pos = len(magic)
    if len(data) < pos + 8:
        raise BundleError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", data, pos)
    pos += 8
    if not (1 <= version <= max_version):
        raise BundleError(f"{path}: unsupported format version {version}")
    sections = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode()
        pos += name_len
        off, length, crc = struct.unpack_from("<QQI", data, pos)
        pos += 20
        if off + length > len(data):
            raise BundleError(f"{path}: section {name!r} is truncated")
        payload = data[off : off + length]
        if zlib.crc32(payload) != crc:
            raise BundleError(f"{path}: section {name!r} failed its checksum")
        sections[name] = payload
    return version, sections


def _f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _u32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<u4").tobytes()


# --- conv weight packing ---------------------------------------------------------


def pack_conv_weights(layer: ConvLayer) -> np.ndarray:
    """Pack a 2x2 layer into one 4-component texel per (out, in) pair.

    Texel order is the spatial taps (0,0), (1,0), (0,1), (1,1); biases are
    appended as one final 4-padded row. Returns (out_ch + 1, in_ch, 4)
    float32.
    """
    if layer.kernel != (2, 2):
        raise ValueError("weight packing is defined for 2x2 kernels only")
    w = layer.weights.astype(np.float32)
    out_ch, in_ch = w.shape[:2]
    block = np.zeros((out_ch + 1, in_ch, 4), dtype=np.float32)
    block[:out_ch, :, 0] = w[:, :, 0, 0]
    block[:out_ch, :, 1] = w[:, :, 1, 0]
    block[:out_ch, :, 2] = w[:, :, 0, 1]
    block[:out_ch, :, 3] = w[:, :, 1, 1]
    bias = layer.bias.astype(np.float32)
    if out_ch > in_ch * 4:
        raise ValueError("bias row cannot hold this many output channels")
    block[out_ch].reshape(-1)[:out_ch] = bias
    return block


def unpack_conv_weights(block: np.ndarray):
    """Inverse of pack_conv_weights; returns (weights, bias) float32."""
    block = np.asarray(block, dtype=np.float32)
    out_ch = block.shape[0] - 1
    in_ch = block.shape[1]
    w = np.zeros((out_ch, in_ch, 2, 2), dtype=np.float32)
    w[:, :, 0, 0] = block[:out_ch, :, 0]
    w[:, :, 1, 0] = block[:out_ch, :, 1]
    w[:, :, 0, 1] = block[:out_ch, :, 2]
    w[:, :, 1, 1] = block[:out_ch, :, 3]
    bias = block[out_ch].reshape(-1)[:out_ch].copy()
    return w, bias


# --- bundle export / import -------------------------------------------------------


def export_bundle(
    duplex: DuplexGeometry,
    net: ShadingNet,
    path,
    preset: str = "compact",
    background=(1.0, 1.0, 1.0),
    scene_hash: str = "",
    config_hash: str = "",
    pose_bounds: dict = None,
    oracle_steps: int = None,
) -> None:
    """Serialize the trained model; parameters are quantized to float32."""
    manifest = {
        "format_version": BUNDLE_VERSION,
        "layer_count": duplex.layer_count,
        "feature_dim": duplex.feature_dim,
        "thresholds": list(duplex.thresholds),
        "preset": preset,
        "feature_order": "outer-first",
        "channel_layout": [
            {"name": name, "size": size} for name, size in net.layout.groups
        ],
        "pe_view_levels": net.pe_view_levels,
        "pe_pos_levels": net.pe_pos_levels,
        "background": [float(c) for c in background],
        "scene_hash": scene_hash,
        "config_hash": config_hash,
        "net": [
            {
                "in_ch": l.in_channels,
                "out_ch": l.out_channels,
                "kh": l.kernel[0],
                "kw": l.kernel[1],
                "activation": l.activation,
            }
            for l in net.layers
        ],
        "conv_footprint": "forward-offset, zero padding past the image",
        "weight_pack": "texel (0,0),(1,0),(0,1),(1,1); bias appended as 4-padded row",
        "layers": [
            {
                "vertices": len(fm.mesh.vertices),
                "triangles": len(fm.mesh.triangles),
            }
            for fm in duplex.layers
        ],
    }
    if pose_bounds is not None:
        manifest["pose_bounds"] = pose_bounds
    if oracle_steps is not None:
        manifest["oracle_steps"] = int(oracle_steps)

    sections = {
        MANIFEST_SECTION: json.dumps(manifest, indent=1).encode()
    }
    for i, fm in enumerate(duplex.layers):
        sections[f"layer{i}/positions"] = _f32_bytes(fm.mesh.vertices)
        sections[f"layer{i}/indices"] = _u32_bytes(fm.mesh.triangles)
        sections[f"layer{i}/features"] = _f32_bytes(fm.features)
    for j, layer in enumerate(net.layers):
        sections[f"net/layer{j}/weights"] = _f32_bytes(layer.weights)
        sections[f"net/layer{j}/bias"] = _f32_bytes(layer.bias)
        if layer.kernel == (2, 2):
            sections[f"net/layer{j}/packed"] = pack_conv_weights(layer).tobytes()
    try:
        write_sections(path, sections, BUNDLE_MAGIC, BUNDLE_VERSION)
    except OSError as e:
        raise OSError(f"failed writing bundle {path}: {e}") from e


def import_bundle(path):
    """Load a bundle back into (DuplexGeometry, ShadingNet, manifest).

    Parameters come back float32-exact (promoted to float64 storage); type
    invariants are re-validated on load.
    """
    _, sections = read_sections(path, BUNDLE_MAGIC, BUNDLE_VERSION)
    if MANIFEST_SECTION not in sections:
        raise BundleError(f"{path}: bundle has no manifest")
    manifest = json.loads(sections[MANIFEST_SECTION].decode())

    def grab(name, dtype):
        if name not in sections:
            raise BundleError(f"{path}: missing section {name!r}")
        return np.frombuffer(sections[name], dtype=dtype)

    layers = []
    fdim = int(manifest["feature_dim"])
    for i, desc in enumerate(manifest["layers"]):
        nv, nt = int(desc["vertices"]), int(desc["triangles"])
        verts = grab(f"layer{i}/positions", "<f4").astype(np.float64)
        tris = grab(f"layer{i}/indices", "<u4").astype(np.int32)
        feats = grab(f"layer{i}/features", "<f4").astype(np.float64)
        if verts.size != nv * 3 or tris.size != nt * 3 or feats.size != nv * fdim:
            raise BundleError(f"{path}: layer {i} sections disagree with the manifest")
        mesh = TriangleMesh(verts.reshape(nv, 3), tris.reshape(nt, 3))
        layers.append(FeatureMesh(mesh, feats.reshape(nv, fdim)))
    duplex = DuplexGeometry(layers, [float(t) for t in manifest["thresholds"]])

    net_layers = []
    for j, desc in enumerate(manifest["net"]):
        shape = (desc["out_ch"], desc["in_ch"], desc["kh"], desc["kw"])
        w = grab(f"net/layer{j}/weights", "<f4").astype(np.float64)
        b = grab(f"net/layer{j}/bias", "<f4").astype(np.float64)
        if w.size != np.prod(shape) or b.size != desc["out_ch"]:
            raise BundleError(f"{path}: net layer {j} sections disagree with the manifest")
        net_layers.append(ConvLayer(w.reshape(shape), b, desc["activation"]))
    layout = make_input_layout(
        duplex.layer_count, fdim, manifest["pe_view_levels"], manifest["pe_pos_levels"]
    )
    declared = [(g["name"], g["size"]) for g in manifest["channel_layout"]]
    if declared != list(layout.groups):
        raise BundleError(f"{path}: manifest channel layout is not reproducible")
    net = ShadingNet(
        net_layers, layout, manifest["pe_view_levels"], manifest["pe_pos_levels"]
    )
    return duplex, net, manifest
