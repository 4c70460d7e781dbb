/**
 * Pointer/wheel orbit controls: drag orbits (theta, phi), wheel zooms the
 * radius, modifier-drag pans the look target. Input events update the
 * state immediately; the render loop samples it each frame.
 */

import { OrbitState } from './camera.js';

export interface OrbitLimits {
  rMin: number;
  rMax: number;
  thetaMin: number;
  thetaMax: number;
}

const EPS = 1e-4;

export class OrbitControls {
  state: OrbitState;
  limits: OrbitLimits;
  changed = true;
  private dragging = false;
  private panning = false;
  private lastX = 0;
  private lastY = 0;

  constructor(canvas: HTMLElement, state: OrbitState, limits: OrbitLimits) {
    this.state = state;
    this.limits = limits;
    canvas.addEventListener('pointerdown', (e) => {
      this.dragging = true;
      this.panning = e.shiftKey || e.ctrlKey || e.button === 2;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      (e.target as HTMLElement).setPointerCapture?.(e.pointerId);
    });
    canvas.addEventListener('pointerup', () => {
      this.dragging = false;
    });
    canvas.addEventListener('pointermove', (e) => {
      if (!this.dragging) return;
      const dx = e.clientX - this.lastX;
      const dy = e.clientY - this.lastY;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      const w = (canvas as HTMLCanvasElement).clientWidth || 800;
      if (this.panning) {
        this.pan(dx, dy);
      } else {
        // full drag across the width sweeps phi by 2*pi
        this.state.phi -= (dx / w) * 2 * Math.PI;
        this.state.theta -= (dy / w) * Math.PI;
      }
      this.clamp();
      this.changed = true;
    });
    canvas.addEventListener(
      'wheel',
      (e) => {
        e.preventDefault();
        this.state.r *= Math.exp(e.deltaY * 0.001);
        this.clamp();
        this.changed = true;
      },
      { passive: false },
    );
    canvas.addEventListener('contextmenu', (e) => e.preventDefault());
  }

  private pan(dx: number, dy: number): void {
    const s = this.state;
    const scale = (s.r * 0.0015);
    // screen-right and screen-up in world space for the look-at frame
    const f = [
      -Math.sin(s.theta) * Math.cos(s.phi),
      -Math.sin(s.theta) * Math.sin(s.phi),
      -Math.cos(s.theta),
    ];
    let up = [0, 0, 1];
    if (Math.abs(f[2]) > 0.999) up = [1, 0, 0];
    const right = norm3(cross3(f, up));
    const down = cross3(f, right);
    s.target[0] -= scale * (dx * right[0] - dy * down[0]);
    s.target[1] -= scale * (dx * right[1] - dy * down[1]);
    s.target[2] -= scale * (dx * right[2] - dy * down[2]);
  }

  clamp(): void {
    const s = this.state;
    const l = this.limits;
    s.r = Math.min(Math.max(s.r, l.rMin), l.rMax);
    s.theta = Math.min(Math.max(s.theta, Math.max(l.thetaMin, EPS)), Math.min(l.thetaMax, Math.PI - EPS));
  }
}

function cross3(a: number[], b: number[]): number[] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm3(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

/** Camera limits from the bundle's recorded pose bounds with slack. */
export function limitsFromPoseBounds(
  bounds: { r: [number, number]; theta: [number, number] } | undefined,
  slack = 0.25,
): OrbitLimits {
  if (!bounds) {
    return { rMin: 0.5, rMax: 20, thetaMin: EPS, thetaMax: Math.PI - EPS };
  }
  const rSpan = bounds.r[1] - bounds.r[0];
  const tSpan = bounds.theta[1] - bounds.theta[0];
  return {
    rMin: bounds.r[0] - slack * (rSpan + 0.5),
    rMax: bounds.r[1] + slack * (rSpan + 0.5),
    thetaMin: bounds.theta[0] - slack * (tSpan + 0.1),
    thetaMax: bounds.theta[1] + slack * (tSpan + 0.1),
  };
}
