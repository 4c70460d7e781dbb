import { readFileSync } from 'node:fs';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import { parseBundle } from '../src/bundle.js';
import { parseGBufferDump, parseRawImage } from '../src/formats.js';
import { shadeReference } from '../src/convref.js';

const ASSETS = join(__dirname, '..', 'test-assets');

function load(name: string): ArrayBuffer {
  const buf = readFileSync(join(ASSETS, name));
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

describe('shading parity against the training-side renderer', () => {
  it('reproduces the reference frame within 2/255 on >= 99% of pixels', () => {
    const bundle = parseBundle(load('tiny.bundle'));
    const gbuf = parseGBufferDump(load('ref.gbuf'));
    const ref = parseRawImage(load('ref.f32'));
    expect(gbuf.width).toBe(ref.width);
    expect(gbuf.height).toBe(ref.height);

    const ours = shadeReference(gbuf, bundle);
    const n = ref.width * ref.height;
    let ok = 0;
    let worst = 0;
    for (let i = 0; i < n; i++) {
      let d = 0;
      for (let c = 0; c < 3; c++) {
        d = Math.max(d, Math.abs(ours[i * 3 + c] - ref.pixels[i * 3 + c]));
      }
      worst = Math.max(worst, d);
      if (d <= 2 / 255) ok++;
    }
    expect(ok / n).toBeGreaterThanOrEqual(0.99);
    // CPU-vs-CPU float math should in fact agree much tighter
    expect(worst).toBeLessThanOrEqual(1e-4);
  });

  it('composites all-miss pixels with the manifest background', () => {
    const bundle = parseBundle(load('tiny.bundle'));
    const gbuf = parseGBufferDump(load('ref.gbuf'));
    const out = shadeReference(gbuf, bundle);
    const n = gbuf.width * gbuf.height;
    const bg = bundle.manifest.background;
    let misses = 0;
    for (let i = 0; i < n; i++) {
      if (!gbuf.mask[i] && !gbuf.mask[n + i]) {
        misses++;
        expect(out[i * 3]).toBe(bg[0]);
        expect(out[i * 3 + 1]).toBe(bg[1]);
        expect(out[i * 3 + 2]).toBe(bg[2]);
      }
    }
    expect(misses).toBeGreaterThan(0);
  });
});
