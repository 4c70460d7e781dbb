/** Parsers for the CLI's raw dumps used by the parity harness. */

import { BundleError, readSections } from './bundle.js';

export const RAW_IMAGE_MAGIC = 'DXFIMGF1';
export const GBUFFER_MAGIC = 'DXFGBUF1';

export interface RawImage {
  width: number;
  height: number;
  /** h*w*3 float32, row-major from the top. */
  pixels: Float32Array;
}

export function parseRawImage(buf: ArrayBuffer): RawImage {
  const bytes = new Uint8Array(buf);
  const dec = new TextDecoder();
  if (dec.decode(bytes.subarray(0, 8)) !== RAW_IMAGE_MAGIC) {
    throw new BundleError('not a raw image dump');
  }
  const view = new DataView(buf);
  const width = view.getUint32(8, true);
  const height = view.getUint32(12, true);
  const pixels = new Float32Array(buf.slice(16));
  if (pixels.length !== width * height * 3) {
    throw new BundleError('raw image size mismatch');
  }
  return { width, height, pixels };
}

export interface GBufferDump {
  width: number;
  height: number;
  layerCount: number;
  featureDim: number;
  /** per layer: h*w*F float32 */
  features: Float32Array[];
  /** per layer: h*w*3 float32 */
  positions: Float32Array[];
  /** layerCount*h*w uint8 */
  mask: Uint8Array;
  /** h*w*3 float32 */
  viewDir: Float32Array;
}

export function parseGBufferDump(buf: ArrayBuffer): GBufferDump {
  const sections = readSections(buf, GBUFFER_MAGIC, 1);
  const manifest = JSON.parse(new TextDecoder().decode(sections.get('manifest')!));
  const layerCount = manifest.layer_count as number;
  const f32 = (name: string) => {
    const s = sections.get(name);
    if (!s) throw new BundleError(`missing section ${name}`);
    return new Float32Array(s.slice().buffer);
  };
  const features: Float32Array[] = [];
  const positions: Float32Array[] = [];
  for (let i = 0; i < layerCount; i++) {
    features.push(f32(`feature${i}`));
    positions.push(f32(`position${i}`));
  }
  return {
    width: manifest.width,
    height: manifest.height,
    layerCount,
    featureDim: manifest.feature_dim,
    features,
    positions,
    mask: sections.get('mask')!.slice(),
    viewDir: f32('view_dir'),
  };
}
