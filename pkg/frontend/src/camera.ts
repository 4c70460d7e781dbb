/**
 * Orbit camera matching the training pipeline's conventions: world->camera
 * rotation R with +z forward and image y down, rays through pixel centers,
 * and a canonical world-up (+z) look-at roll.
 */

export interface OrbitState {
  r: number;
  theta: number; // polar angle from +z
  phi: number; // azimuth from +x
  target: [number, number, number];
}

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface CameraPose {
  /** row-major 3x3 world->camera rotation (full f64 precision) */
  r: number[];
  /** camera center in world coordinates */
  center: [number, number, number];
  /** t = -R * center */
  t: [number, number, number];
}

function cross(a: number[], b: number[]): number[] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

export function orbitPose(state: OrbitState): CameraPose {
  const { r, theta, phi, target } = state;
  const c = [
    r * Math.sin(theta) * Math.cos(phi) + target[0],
    r * Math.sin(theta) * Math.sin(phi) + target[1],
    r * Math.cos(theta) + target[2],
  ];
  const f = normalize([target[0] - c[0], target[1] - c[1], target[2] - c[2]]);
  let up = [0, 0, 1];
  if (Math.abs(f[0] * up[0] + f[1] * up[1] + f[2] * up[2]) > 0.999) {
    up = [1, 0, 0];
  }
  const xc = normalize(cross(f, up));
  const yc = cross(f, xc);
  const rot = [...xc, ...yc, ...f];
  const t: [number, number, number] = [
    -(rot[0] * c[0] + rot[1] * c[1] + rot[2] * c[2]),
    -(rot[3] * c[0] + rot[4] * c[1] + rot[5] * c[2]),
    -(rot[6] * c[0] + rot[7] * c[1] + rot[8] * c[2]),
  ];
  return { r: rot, center: c as [number, number, number], t };
}

/**
 * World->clip matrix (column-major, ready for uniformMatrix4fv).
 *
 * Maps image v = 0 (top row) to NDC y = -1, so attachment memory row 0
 * holds the top image row and texelFetch coordinates equal pixel
 * coordinates used on the CPU side.
 */
export function clipMatrix(pose: CameraPose, k: Intrinsics, near = 0.05, far = 50.0): Float32Array {
  const { fx, fy, cx, cy, width: w, height: h } = k;
  const r = pose.r;
  const t = pose.t;
  // P rows applied to camera-space q
  const p00 = (2 * fx) / w;
  const p02 = (2 * cx) / w - 1;
  const p11 = (2 * fy) / h;
  const p12 = (2 * cy) / h - 1;
  const p22 = (far + near) / (far - near);
  const p23 = (-2 * far * near) / (far - near);
  // row-major world->clip = P * [R | t]
  const m = [
    p00 * r[0] + p02 * r[6], p00 * r[1] + p02 * r[7], p00 * r[2] + p02 * r[8], p00 * t[0] + p02 * t[2],
    p11 * r[3] + p12 * r[6], p11 * r[4] + p12 * r[7], p11 * r[5] + p12 * r[8], p11 * t[1] + p12 * t[2],
    p22 * r[6], p22 * r[7], p22 * r[8], p22 * t[2] + p23,
    r[6], r[7], r[8], t[2],
  ];
  // transpose to column-major
  const col = new Float32Array(16);
  for (let i = 0; i < 4; i++) {
    for (let j = 0; j < 4; j++) {
      col[j * 4 + i] = m[i * 4 + j];
    }
  }
  return col;
}

/** Pixel-center world ray direction, matching the CPU ray generation. */
export function pixelRayDir(pose: CameraPose, k: Intrinsics, px: number, py: number): [number, number, number] {
  const dx = (px + 0.5 - k.cx) / k.fx;
  const dy = (py + 0.5 - k.cy) / k.fy;
  const r = pose.r;
  const d = [
    r[0] * dx + r[3] * dy + r[6],
    r[1] * dx + r[4] * dy + r[7],
    r[2] * dx + r[5] * dy + r[8],
  ];
  const n = Math.hypot(d[0], d[1], d[2]);
  return [d[0] / n, d[1] / n, d[2] / n];
}

export function intrinsicsForSize(width: number, height: number, fovXDeg: number): Intrinsics {
  const fx = (0.5 * width) / Math.tan((fovXDeg * Math.PI) / 360.0);
  return { fx, fy: fx, cx: width / 2, cy: height / 2, width, height };
}
