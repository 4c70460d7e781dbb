/**
 * Browser entry point: fetch the bundle named in the query string, build
 * the renderer, and run the interaction/render loop.
 *
 * Query parameters:
 *   ?bundle=model.bundle        bundle URL (default "model.bundle")
 *   &size=800                   framebuffer size
 *   &r=2.7&theta=1.2&phi=0.5    preset camera pose (parity testing)
 *   &fov=49.1                   horizontal field of view in degrees
 *   &ref=frame.f32              reference frame for the parity overlay
 */

import { parseBundle } from './bundle.js';
import { intrinsicsForSize, orbitPose, OrbitState } from './camera.js';
import { OrbitControls, limitsFromPoseBounds } from './controls.js';
import { parseRawImage } from './formats.js';
import { Renderer } from './renderer.js';

function banner(text: string, error = false): void {
  const el = document.getElementById('banner')!;
  el.textContent = text;
  el.style.display = 'block';
  el.className = error ? 'error' : 'info';
}

async function start(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const bundleUrl = params.get('bundle') ?? 'model.bundle';
  const size = parseInt(params.get('size') ?? '800', 10);
  const fov = parseFloat(params.get('fov') ?? '49.1');

  const canvas = document.getElementById('view') as HTMLCanvasElement;
  canvas.width = size;
  canvas.height = size;
  const gl = canvas.getContext('webgl2', { antialias: false, preserveDrawingBuffer: true });
  if (!gl) {
    banner('WebGL2 is unavailable in this browser', true);
    return;
  }

  banner(`loading ${bundleUrl} ...`);
  let renderer: Renderer;
  let state: OrbitState;
  try {
    const resp = await fetch(bundleUrl);
    if (!resp.ok) throw new Error(`HTTP ${resp.status} fetching ${bundleUrl}`);
    const bundle = parseBundle(await resp.arrayBuffer());
    renderer = new Renderer(gl, bundle, size, size);
    const pb = bundle.manifest.pose_bounds;
    state = {
      r: parseFloat(params.get('r') ?? String(pb ? 0.5 * (pb.r[0] + pb.r[1]) : 2.7)),
      theta: parseFloat(params.get('theta') ?? String(pb ? 0.5 * (pb.theta[0] + pb.theta[1]) : 1.2)),
      phi: parseFloat(params.get('phi') ?? '0.5'),
      target: [0, 0, 0],
    };
    const info = `${bundle.manifest.layer_count} layers, ` +
      bundle.layers.map((l) => `${l.triangleCount} tris`).join(' + ') +
      (renderer.halfFloat ? ' [half-float targets: full-float unsupported]' : '');
    banner(info);
    setTimeout(() => (document.getElementById('banner')!.style.display = 'none'), 4000);
    if (renderer.halfFloat) banner(info, false);
  } catch (e) {
    banner(`failed to load bundle: ${e}`, true);
    return;
  }

  const refUrl = params.get('ref');
  if (refUrl) {
    try {
      const resp = await fetch(refUrl);
      const ref = parseRawImage(await resp.arrayBuffer());
      renderer.setReference(ref.pixels);
    } catch (e) {
      banner(`reference frame failed to load: ${e}`, true);
    }
  }

  const controls = new OrbitControls(
    canvas, state, limitsFromPoseBounds(renderer.bundle.manifest.pose_bounds),
  );
  controls.clamp();
  let showDiff = false;
  document.getElementById('diff')!.addEventListener('click', () => {
    showDiff = !showDiff;
    controls.changed = true;
  });

  const k = intrinsicsForSize(size, size, fov);
  const fpsEl = document.getElementById('fps')!;
  let frames = 0;
  let lastReport = performance.now();

  const loop = (): void => {
    renderer.renderFrame(orbitPose(controls.state), k, showDiff);
    frames++;
    const now = performance.now();
    if (now - lastReport > 500) {
      fpsEl.textContent = `${((frames * 1000) / (now - lastReport)).toFixed(1)} fps | ` +
        `r=${controls.state.r.toFixed(2)} theta=${controls.state.theta.toFixed(2)} ` +
        `phi=${controls.state.phi.toFixed(2)}`;
      frames = 0;
      lastReport = now;
    }
    requestAnimationFrame(loop);
  };
  canvas.addEventListener('webglcontextlost', (e) => {
    e.preventDefault();
    banner('GPU context lost; reloading', true);
    location.reload();
  });
  requestAnimationFrame(loop);
}

start();
