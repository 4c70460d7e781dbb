/**
 * Baked-asset bundle parsing.
 *
 * A bundle is little-endian: 8-byte magic "DXFBNDL1", u32 version, u32
 * section count, then a table of contents (u16 name length, name bytes,
 * u64 offset, u64 length, u32 crc32) followed by section payloads. The
 * "manifest" section is JSON and fully describes geometry sizes, the
 * network architecture and the input channel layout.
 */

export const BUNDLE_MAGIC = 'DXFBNDL1';
export const SUPPORTED_VERSION = 1;

export interface ChannelGroup {
  name: string;
  size: number;
}

export interface NetLayerSpec {
  in_ch: number;
  out_ch: number;
  kh: number;
  kw: number;
  activation: 'relu' | 'sigmoid' | 'none';
}

export interface Manifest {
  format_version: number;
  layer_count: number;
  feature_dim: number;
  thresholds: number[];
  preset: string;
  channel_layout: ChannelGroup[];
  pe_view_levels: number;
  pe_pos_levels: number;
  background: [number, number, number];
  scene_hash: string;
  config_hash: string;
  net: NetLayerSpec[];
  layers: { vertices: number; triangles: number }[];
  pose_bounds?: { r: [number, number]; theta: [number, number]; phi: [number, number] };
  oracle_steps?: number;
}

export interface MeshLayer {
  positions: Float32Array; // V*3
  indices: Uint32Array; // T*3
  features: Float32Array; // V*F
  vertexCount: number;
  triangleCount: number;
}

export interface NetLayer {
  spec: NetLayerSpec;
  weights: Float32Array; // out*in*kh*kw, C order
  bias: Float32Array;
  packed: Float32Array | null; // (out+1)*in*4 for 2x2 kernels
}

export interface Bundle {
  manifest: Manifest;
  layers: MeshLayer[];
  net: NetLayer[];
}

const CRC_TABLE = (() => {
  const t = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    t[n] = c >>> 0;
  }
  return t;
})();

export function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export class BundleError extends Error {}

export function readSections(
  buf: ArrayBuffer,
  magic: string,
  maxVersion: number,
): Map<string, Uint8Array> {
  const bytes = new Uint8Array(buf);
  const view = new DataView(buf);
  const dec = new TextDecoder();
  if (bytes.length < magic.length + 8) {
    throw new BundleError('file too short');
  }
  if (dec.decode(bytes.subarray(0, magic.length)) !== magic) {
    throw new BundleError(`bad magic (expected ${magic})`);
  }
  let pos = magic.length;
  const version = view.getUint32(pos, true);
  const count = view.getUint32(pos + 4, true);
  pos += 8;
  if (version < 1 || version > maxVersion) {
    throw new BundleError(`unsupported format version ${version}`);
  }
  const sections = new Map<string, Uint8Array>();
  for (let i = 0; i < count; i++) {
    const nameLen = view.getUint16(pos, true);
    pos += 2;
    const name = dec.decode(bytes.subarray(pos, pos + nameLen));
    pos += nameLen;
    const offset = Number(view.getBigUint64(pos, true));
    const length = Number(view.getBigUint64(pos + 8, true));
    const crc = view.getUint32(pos + 16, true);
    pos += 20;
    if (offset + length > bytes.length) {
      throw new BundleError(`section ${name} is truncated`);
    }
    const payload = bytes.subarray(offset, offset + length);
    if (crc32(payload) !== crc) {
      throw new BundleError(`section ${name} failed its checksum`);
    }
    sections.set(name, payload);
  }
  return sections;
}

function f32(payload: Uint8Array): Float32Array {
  return new Float32Array(payload.slice().buffer, 0, payload.length / 4);
}

function u32(payload: Uint8Array): Uint32Array {
  return new Uint32Array(payload.slice().buffer, 0, payload.length / 4);
}

export function parseBundle(buf: ArrayBuffer): Bundle {
  const sections = readSections(buf, BUNDLE_MAGIC, SUPPORTED_VERSION);
  const manifestBytes = sections.get('manifest');
  if (!manifestBytes) {
    throw new BundleError('bundle has no manifest');
  }
  const manifest = JSON.parse(new TextDecoder().decode(manifestBytes)) as Manifest;

  const need = (name: string): Uint8Array => {
    const s = sections.get(name);
    if (!s) throw new BundleError(`missing section ${name}`);
    return s;
  };

  const layers: MeshLayer[] = manifest.layers.map((desc, i) => {
    const positions = f32(need(`layer${i}/positions`));
    const indices = u32(need(`layer${i}/indices`));
    const features = f32(need(`layer${i}/features`));
    if (
      positions.length !== desc.vertices * 3 ||
      indices.length !== desc.triangles * 3 ||
      features.length !== desc.vertices * manifest.feature_dim
    ) {
      throw new BundleError(`layer ${i} sections disagree with the manifest`);
    }
    return {
      positions,
      indices,
      features,
      vertexCount: desc.vertices,
      triangleCount: desc.triangles,
    };
  });

  const net: NetLayer[] = manifest.net.map((spec, j) => {
    const weights = f32(need(`net/layer${j}/weights`));
    const bias = f32(need(`net/layer${j}/bias`));
    if (
      weights.length !== spec.out_ch * spec.in_ch * spec.kh * spec.kw ||
      bias.length !== spec.out_ch
    ) {
      throw new BundleError(`net layer ${j} sections disagree with the manifest`);
    }
    const packedBytes = sections.get(`net/layer${j}/packed`);
    return {
      spec,
      weights,
      bias,
      packed: packedBytes ? f32(packedBytes) : null,
    };
  });

  const total = manifest.channel_layout.reduce((a, g) => a + g.size, 0);
  if (total !== manifest.net[0].in_ch) {
    throw new BundleError('channel layout does not match the first layer');
  }
  return { manifest, layers, net };
}

/**
 * Expand a packed 2x2 block ((out+1) x in x 4 texels, taps ordered
 * (0,0),(1,0),(0,1),(1,1), bias in the final 4-padded row) back into
 * (weights, bias) in canonical (out, in, kh, kw) order.
 */
export function unpackConvWeights(
  block: Float32Array,
  outCh: number,
  inCh: number,
): { weights: Float32Array; bias: Float32Array } {
  if (block.length !== (outCh + 1) * inCh * 4) {
    throw new BundleError('packed block has unexpected size');
  }
  const weights = new Float32Array(outCh * inCh * 4);
  for (let o = 0; o < outCh; o++) {
    for (let i = 0; i < inCh; i++) {
      const t = (o * inCh + i) * 4;
      const w = (o * inCh + i) * 4;
      // canonical index (kh, kw): [t0 t1 t2 t3] = (0,0),(1,0),(0,1),(1,1)
      weights[w + 0] = block[t + 0]; // (0,0)
      weights[w + 1] = block[t + 2]; // (0,1)
      weights[w + 2] = block[t + 1]; // (1,0)
      weights[w + 3] = block[t + 3]; // (1,1)
    }
  }
  const bias = new Float32Array(outCh);
  const biasRow = outCh * inCh * 4;
  for (let o = 0; o < outCh; o++) {
    bias[o] = block[biasRow + o];
  }
  return { weights, bias };
}
