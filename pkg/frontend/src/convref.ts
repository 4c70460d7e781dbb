/**
 * CPU reference of the two-pass convolutional shading.
 *
 * This is the exact math the GLSL passes implement: assemble the input
 * channels per the bundle's channel layout (features per layer, hit
 * masks, sin/cos-encoded view direction), then run the convolution stack
 * with the forward-offset footprint (output pixel (x, y) reads inputs
 * (x+i, y+j), zero past the image). Used by the parity tests and the
 * in-browser diff overlay.
 */

import { Bundle } from './bundle.js';
import { GBufferDump } from './formats.js';

export function positionalEncode(out: Float64Array, o: number, x: number, y: number, z: number, levels: number): void {
  out[o] = x;
  out[o + 1] = y;
  out[o + 2] = z;
  let p = o + 3;
  for (let l = 0; l < levels; l++) {
    const s = 2 ** l;
    out[p++] = Math.sin(s * x);
    out[p++] = Math.sin(s * y);
    out[p++] = Math.sin(s * z);
    out[p++] = Math.cos(s * x);
    out[p++] = Math.cos(s * y);
    out[p++] = Math.cos(s * z);
  }
}

/** Build the H*W*C input tensor from a G-buffer dump. */
export function assembleInput(gbuf: GBufferDump, bundle: Bundle): Float64Array {
  const { width: w, height: h } = gbuf;
  const m = bundle.manifest;
  const f = m.feature_dim;
  const groups = m.channel_layout;
  const c = groups.reduce((a, g) => a + g.size, 0);
  const x = new Float64Array(h * w * c);
  for (let py = 0; py < h; py++) {
    for (let px = 0; px < w; px++) {
      const pix = py * w + px;
      let ch = 0;
      for (const g of groups) {
        const base = pix * c + ch;
        if (g.name.startsWith('features')) {
          const li = parseInt(g.name.slice('features'.length), 10);
          const src = gbuf.features[li];
          for (let k = 0; k < f; k++) x[base + k] = src[pix * f + k];
        } else if (g.name === 'masks') {
          for (let li = 0; li < gbuf.layerCount; li++) {
            x[base + li] = gbuf.mask[li * h * w + pix];
          }
        } else if (g.name === 'view_dir') {
          positionalEncode(
            x, base,
            gbuf.viewDir[pix * 3], gbuf.viewDir[pix * 3 + 1], gbuf.viewDir[pix * 3 + 2],
            m.pe_view_levels,
          );
        } else if (g.name.startsWith('position')) {
          const li = parseInt(g.name.slice('position'.length), 10);
          const src = gbuf.positions[li];
          positionalEncode(
            x, base, src[pix * 3], src[pix * 3 + 1], src[pix * 3 + 2], m.pe_pos_levels,
          );
        } else {
          throw new Error(`unknown channel group ${g.name}`);
        }
        ch += g.size;
      }
    }
  }
  return x;
}

function activate(v: number, kind: string): number {
  if (kind === 'relu') return v > 0 ? v : 0;
  if (kind === 'sigmoid') return 1 / (1 + Math.exp(-v));
  return v;
}

/** One convolution layer, channel-last tensors. */
export function convForward(
  x: Float64Array,
  h: number,
  w: number,
  cin: number,
  weights: Float32Array | Float64Array,
  bias: Float32Array | Float64Array,
  cout: number,
  k: number,
  activation: string,
): Float64Array {
  const out = new Float64Array(h * w * cout);
  for (let y = 0; y < h; y++) {
    for (let px = 0; px < w; px++) {
      for (let co = 0; co < cout; co++) {
        let acc = bias[co];
        for (let ci = 0; ci < cin; ci++) {
          for (let a = 0; a < k; a++) {
            const ya = y + a;
            if (ya >= h) continue;
            for (let b = 0; b < k; b++) {
              const xb = px + b;
              if (xb >= w) continue;
              acc += x[(ya * w + xb) * cin + ci] * weights[((co * cin + ci) * k + a) * k + b];
            }
          }
        }
        out[(y * w + px) * cout + co] = activate(acc, activation);
      }
    }
  }
  return out;
}

/**
 * Full student render from a G-buffer dump: shade through the bundle's
 * network, then composite all-miss pixels over the manifest background.
 * Returns h*w*3 in [0, 1].
 */
export function shadeReference(gbuf: GBufferDump, bundle: Bundle): Float64Array {
  const { width: w, height: h } = gbuf;
  let cur = assembleInput(gbuf, bundle);
  let cin = bundle.manifest.channel_layout.reduce((a, g) => a + g.size, 0);
  for (const layer of bundle.net) {
    cur = convForward(
      cur, h, w, cin, layer.weights, layer.bias,
      layer.spec.out_ch, layer.spec.kh, layer.spec.activation,
    );
    cin = layer.spec.out_ch;
  }
  const bg = bundle.manifest.background;
  for (let pix = 0; pix < h * w; pix++) {
    let anyHit = 0;
    for (let li = 0; li < gbuf.layerCount; li++) {
      anyHit |= gbuf.mask[li * h * w + pix];
    }
    if (!anyHit) {
      cur[pix * 3] = bg[0];
      cur[pix * 3 + 1] = bg[1];
      cur[pix * 3 + 2] = bg[2];
    }
  }
  return cur;
}
