import { readFileSync } from 'node:fs';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import { clipMatrix, intrinsicsForSize, orbitPose, pixelRayDir } from '../src/camera.js';

const fixtures = JSON.parse(
  readFileSync(join(__dirname, '..', 'test-assets', 'camera_fixtures.json'), 'utf8'),
) as {
  rtp: [number, number, number];
  size: number;
  fov_x_deg: number;
  R: number[][];
  t: number[];
  center: number[];
  rays: Record<string, number[]>;
}[];

describe('camera convention parity with the training pipeline', () => {
  for (const [fi, fx] of fixtures.entries()) {
    it(`fixture ${fi}: pose matrices match`, () => {
      const pose = orbitPose({
        r: fx.rtp[0], theta: fx.rtp[1], phi: fx.rtp[2], target: [0, 0, 0],
      });
      for (let i = 0; i < 3; i++) {
        expect(pose.center[i]).toBeCloseTo(fx.center[i], 9);
        expect(pose.t[i]).toBeCloseTo(fx.t[i], 9);
        for (let j = 0; j < 3; j++) {
          expect(pose.r[i * 3 + j]).toBeCloseTo(fx.R[i][j], 9);
        }
      }
    });

    it(`fixture ${fi}: pixel rays match`, () => {
      const pose = orbitPose({
        r: fx.rtp[0], theta: fx.rtp[1], phi: fx.rtp[2], target: [0, 0, 0],
      });
      const k = intrinsicsForSize(fx.size, fx.size, fx.fov_x_deg);
      for (const [key, dir] of Object.entries(fx.rays)) {
        const [px, py] = key.split(',').map(Number);
        const got = pixelRayDir(pose, k, px, py);
        for (let i = 0; i < 3; i++) {
          expect(got[i]).toBeCloseTo(dir[i], 9);
        }
      }
    });
  }

  it('clip matrix places pixel centers at their NDC positions', () => {
    const fx = fixtures[0];
    const pose = orbitPose({
      r: fx.rtp[0], theta: fx.rtp[1], phi: fx.rtp[2], target: [0, 0, 0],
    });
    const k = intrinsicsForSize(fx.size, fx.size, fx.fov_x_deg);
    const m = clipMatrix(pose, k);
    // a world point 2 units along a pixel ray must project back onto it
    const [px, py] = [17, 40];
    const d = pixelRayDir(pose, k, px, py);
    const p = [
      pose.center[0] + 2 * d[0],
      pose.center[1] + 2 * d[1],
      pose.center[2] + 2 * d[2],
    ];
    // column-major multiply
    const clip = [0, 1, 2, 3].map(
      (i) => m[i] * p[0] + m[4 + i] * p[1] + m[8 + i] * p[2] + m[12 + i],
    );
    const ndcX = clip[0] / clip[3];
    const ndcY = clip[1] / clip[3];
    const u = ((ndcX + 1) / 2) * k.width;
    const vTop = ((ndcY + 1) / 2) * k.height; // row 0 of memory = image top
    expect(u).toBeCloseTo(px + 0.5, 6);
    expect(vTop).toBeCloseTo(py + 0.5, 6);
  });
});
