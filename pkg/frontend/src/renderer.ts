/**
 * WebGL2 two-pass renderer for compact bundles.
 *
 * Pass A rasterizes each mesh layer (depth-tested nearest hit, no
 * culling) into float G-buffer targets. Pass B runs convolution layer 1
 * with in-shader view-direction encoding into 32 hidden channels (RGBA
 * chunks, multiple draws when the device exposes fewer draw buffers).
 * Pass C runs layer 2 + sigmoid and composites misses over the
 * background; a final blit flips rows for display and can overlay a
 * parity heatmap against a CLI reference frame.
 */

import { Bundle, BundleError } from './bundle.js';
import { CameraPose, Intrinsics, clipMatrix } from './camera.js';
import {
  BLIT_FRAG,
  PASS_A_FRAG,
  PASS_A_VERT,
  QUAD_VERT,
  passBFrag,
  passCFrag,
} from './shaders.js';

const HIDDEN = 32;
const HIDDEN_CHUNKS = HIDDEN / 4;

/** The viewer only shades compact bundles (2x2 kernels packed as texels). */
export function assertViewerCompatible(manifest: Bundle['manifest']): void {
  if (manifest.preset !== 'compact' || manifest.net.some((l) => l.kh !== 2 || l.kw !== 2)) {
    throw new BundleError('compact preset required (2x2 kernels only)');
  }
  if (manifest.feature_dim !== 8 || manifest.layer_count !== 2) {
    throw new BundleError('viewer expects 2 layers with 8 features each');
  }
}

interface LayerBuffers {
  vao: WebGLVertexArrayObject;
  indexCount: number;
  featA: WebGLTexture;
  featB: WebGLTexture;
  aux: WebGLTexture;
  fbo: WebGLFramebuffer;
}

export class Renderer {
  readonly gl: WebGL2RenderingContext;
  readonly bundle: Bundle;
  readonly width: number;
  readonly height: number;
  readonly halfFloat: boolean;
  private layers: LayerBuffers[] = [];
  private weightTex1: WebGLTexture;
  private weightTex2: WebGLTexture;
  private hidden: WebGLTexture[] = [];
  private hiddenFbos: WebGLFramebuffer[] = [];
  private drawBuffers: number;
  private frameTex: WebGLTexture;
  private frameFbo: WebGLFramebuffer;
  private referenceTex: WebGLTexture;
  private progA: WebGLProgram;
  private progB: WebGLProgram;
  private progC: WebGLProgram;
  private progBlit: WebGLProgram;
  private quadVao: WebGLVertexArrayObject;

  constructor(gl: WebGL2RenderingContext, bundle: Bundle, width: number, height: number) {
    this.gl = gl;
    this.bundle = bundle;
    this.width = width;
    this.height = height;

    const m = bundle.manifest;
    assertViewerCompatible(m);

    const ext = gl.getExtension('EXT_color_buffer_float');
    this.halfFloat = !ext;
    if (this.halfFloat && !gl.getExtension('EXT_color_buffer_half_float')) {
      throw new BundleError('float render targets are unavailable on this device');
    }

    this.drawBuffers = Math.min(
      HIDDEN_CHUNKS,
      gl.getParameter(gl.MAX_DRAW_BUFFERS) as number,
    );

    this.progA = this.link(PASS_A_VERT, PASS_A_FRAG);
    this.progB = this.link(QUAD_VERT, passBFrag(m.pe_view_levels, this.drawBuffers));
    this.progC = this.link(QUAD_VERT, passCFrag(HIDDEN_CHUNKS));
    this.progBlit = this.link(QUAD_VERT, BLIT_FRAG);

    this.quadVao = gl.createVertexArray()!;
    gl.bindVertexArray(this.quadVao);
    const quad = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, quad);
    gl.bufferData(
      gl.ARRAY_BUFFER,
      new Float32Array([-1, -1, 3, -1, -1, 3]),
      gl.STATIC_DRAW,
    );
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
    gl.bindVertexArray(null);

    for (let i = 0; i < 2; i++) {
      this.layers.push(this.makeLayer(i));
    }
    this.weightTex1 = this.uploadWeights(0);
    this.weightTex2 = this.uploadWeights(1);
    for (let c = 0; c < HIDDEN_CHUNKS; c++) {
      this.hidden.push(this.colorTexture());
    }
    // group hidden chunk textures into FBOs of drawBuffers attachments
    for (let base = 0; base < HIDDEN_CHUNKS; base += this.drawBuffers) {
      const fbo = gl.createFramebuffer()!;
      gl.bindFramebuffer(gl.FRAMEBUFFER, fbo);
      const atts: number[] = [];
      for (let k = 0; k < this.drawBuffers && base + k < HIDDEN_CHUNKS; k++) {
        gl.framebufferTexture2D(
          gl.FRAMEBUFFER,
          gl.COLOR_ATTACHMENT0 + k,
          gl.TEXTURE_2D,
          this.hidden[base + k],
          0,
        );
        atts.push(gl.COLOR_ATTACHMENT0 + k);
      }
      gl.drawBuffers(atts);
      this.hiddenFbos.push(fbo);
    }
    this.frameTex = this.colorTexture();
    this.frameFbo = gl.createFramebuffer()!;
    gl.bindFramebuffer(gl.FRAMEBUFFER, this.frameFbo);
    gl.framebufferTexture2D(
      gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT0, gl.TEXTURE_2D, this.frameTex, 0,
    );
    this.referenceTex = this.colorTexture();
    gl.bindFramebuffer(gl.FRAMEBUFFER, null);
  }

  private link(vsSrc: string, fsSrc: string): WebGLProgram {
    const gl = this.gl;
    const compile = (kind: number, src: string) => {
      const sh = gl.createShader(kind)!;
      gl.shaderSource(sh, src);
      gl.compileShader(sh);
      if (!gl.getShaderParameter(sh, gl.COMPILE_STATUS)) {
        throw new BundleError(`shader compile failed: ${gl.getShaderInfoLog(sh)}`);
      }
      return sh;
    };
    const prog = gl.createProgram()!;
    gl.attachShader(prog, compile(gl.VERTEX_SHADER, vsSrc));
    gl.attachShader(prog, compile(gl.FRAGMENT_SHADER, fsSrc));
    gl.linkProgram(prog);
    if (!gl.getProgramParameter(prog, gl.LINK_STATUS)) {
      throw new BundleError(`program link failed: ${gl.getProgramInfoLog(prog)}`);
    }
    return prog;
  }

  private colorTexture(): WebGLTexture {
    const gl = this.gl;
    const tex = gl.createTexture()!;
    gl.bindTexture(gl.TEXTURE_2D, tex);
    gl.texStorage2D(
      gl.TEXTURE_2D, 1,
      this.halfFloat ? gl.RGBA16F : gl.RGBA32F,
      this.width, this.height,
    );
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
    return tex;
  }

  private makeLayer(index: number): LayerBuffers {
    const gl = this.gl;
    const mesh = this.bundle.layers[index];
    const f = this.bundle.manifest.feature_dim;
    const vao = gl.createVertexArray()!;
    gl.bindVertexArray(vao);

    const pos = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, pos);
    gl.bufferData(gl.ARRAY_BUFFER, mesh.positions, gl.STATIC_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 3, gl.FLOAT, false, 0, 0);

    // split the 8 per-vertex features into two vec4 attributes
    const featA = new Float32Array(mesh.vertexCount * 4);
    const featB = new Float32Array(mesh.vertexCount * 4);
    for (let v = 0; v < mesh.vertexCount; v++) {
      for (let k = 0; k < 4; k++) {
        featA[v * 4 + k] = mesh.features[v * f + k];
        featB[v * 4 + k] = mesh.features[v * f + 4 + k];
      }
    }
    for (const [loc, data] of [[1, featA], [2, featB]] as const) {
      const buf = gl.createBuffer()!;
      gl.bindBuffer(gl.ARRAY_BUFFER, buf);
      gl.bufferData(gl.ARRAY_BUFFER, data, gl.STATIC_DRAW);
      gl.enableVertexAttribArray(loc);
      gl.vertexAttribPointer(loc, 4, gl.FLOAT, false, 0, 0);
    }

    const idx = gl.createBuffer()!;
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, idx);
    gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, mesh.indices, gl.STATIC_DRAW);
    gl.bindVertexArray(null);

    const texA = this.colorTexture();
    const texB = this.colorTexture();
    const aux = this.colorTexture();
    const depth = gl.createRenderbuffer()!;
    gl.bindRenderbuffer(gl.RENDERBUFFER, depth);
    gl.renderbufferStorage(gl.RENDERBUFFER, gl.DEPTH_COMPONENT24, this.width, this.height);
    const fbo = gl.createFramebuffer()!;
    gl.bindFramebuffer(gl.FRAMEBUFFER, fbo);
    gl.framebufferTexture2D(gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT0, gl.TEXTURE_2D, texA, 0);
    gl.framebufferTexture2D(gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT1, gl.TEXTURE_2D, texB, 0);
    gl.framebufferTexture2D(gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT2, gl.TEXTURE_2D, aux, 0);
    gl.framebufferRenderbuffer(gl.FRAMEBUFFER, gl.DEPTH_ATTACHMENT, gl.RENDERBUFFER, depth);
    gl.drawBuffers([gl.COLOR_ATTACHMENT0, gl.COLOR_ATTACHMENT1, gl.COLOR_ATTACHMENT2]);
    gl.bindFramebuffer(gl.FRAMEBUFFER, null);
    return { vao, indexCount: mesh.triangleCount * 3, featA: texA, featB: texB, aux, fbo };
  }

  /** Conv weights as an (out+1) x in RGBA texture from the packed block. */
  private uploadWeights(layerIndex: number): WebGLTexture {
    const gl = this.gl;
    const layer = this.bundle.net[layerIndex];
    if (!layer.packed) {
      throw new BundleError(`net layer ${layerIndex} has no packed weights`);
    }
    const rows = layer.spec.out_ch + 1;
    const cols = layer.spec.in_ch;
    const tex = gl.createTexture()!;
    gl.bindTexture(gl.TEXTURE_2D, tex);
    gl.texImage2D(gl.TEXTURE_2D, 0, gl.RGBA32F, cols, rows, 0, gl.RGBA, gl.FLOAT, layer.packed);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
    return tex;
  }

  setReference(pixels: Float32Array): void {
    const gl = this.gl;
    const rgba = new Float32Array(this.width * this.height * 4);
    for (let i = 0; i < this.width * this.height; i++) {
      rgba[i * 4] = pixels[i * 3];
      rgba[i * 4 + 1] = pixels[i * 3 + 1];
      rgba[i * 4 + 2] = pixels[i * 3 + 2];
      rgba[i * 4 + 3] = 1;
    }
    gl.deleteTexture(this.referenceTex);
    this.referenceTex = gl.createTexture()!;
    gl.bindTexture(gl.TEXTURE_2D, this.referenceTex);
    gl.texImage2D(
      gl.TEXTURE_2D, 0, gl.RGBA32F, this.width, this.height, 0, gl.RGBA, gl.FLOAT, rgba,
    );
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
  }

  renderFrame(pose: CameraPose, k: Intrinsics, showDiff = false): void {
    const gl = this.gl;
    gl.viewport(0, 0, this.width, this.height);

    // pass A: rasterize each layer independently
    gl.enable(gl.DEPTH_TEST);
    gl.disable(gl.CULL_FACE);
    gl.useProgram(this.progA);
    const clip = clipMatrix(pose, k);
    gl.uniformMatrix4fv(gl.getUniformLocation(this.progA, 'worldToClip'), false, clip);
    for (const layer of this.layers) {
      gl.bindFramebuffer(gl.FRAMEBUFFER, layer.fbo);
      gl.clearColor(0, 0, 0, 0);
      gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
      gl.bindVertexArray(layer.vao);
      gl.drawElements(gl.TRIANGLES, layer.indexCount, gl.UNSIGNED_INT, 0);
    }
    gl.bindVertexArray(null);
    gl.disable(gl.DEPTH_TEST);

    // pass B: conv layer 1 -> hidden chunks
    gl.useProgram(this.progB);
    this.bindTextures(this.progB, [
      ['feat0A', this.layers[0].featA],
      ['feat0B', this.layers[0].featB],
      ['aux0', this.layers[0].aux],
      ['feat1A', this.layers[1].featA],
      ['feat1B', this.layers[1].featB],
      ['aux1', this.layers[1].aux],
      ['weights1', this.weightTex1],
    ]);
    gl.uniform2i(gl.getUniformLocation(this.progB, 'frameSize'), this.width, this.height);
    gl.uniform4f(
      gl.getUniformLocation(this.progB, 'camCenter'),
      pose.center[0], pose.center[1], pose.center[2], 0,
    );
    // camRotT columns = rows of R (column-major upload of R^T)
    gl.uniformMatrix3fv(
      gl.getUniformLocation(this.progB, 'camRotT'), false, new Float32Array(pose.r),
    );
    gl.uniform4f(
      gl.getUniformLocation(this.progB, 'intrinsics'), k.fx, k.fy, k.cx, k.cy,
    );
    gl.bindVertexArray(this.quadVao);
    for (let i = 0; i < this.hiddenFbos.length; i++) {
      gl.bindFramebuffer(gl.FRAMEBUFFER, this.hiddenFbos[i]);
      gl.uniform1i(
        gl.getUniformLocation(this.progB, 'chunkBase'), i * this.drawBuffers,
      );
      gl.drawArrays(gl.TRIANGLES, 0, 3);
    }

    // pass C: conv layer 2 + sigmoid + background
    gl.useProgram(this.progC);
    const texList: [string, WebGLTexture][] = this.hidden.map(
      (t, i) => [`hidden${i}`, t] as [string, WebGLTexture],
    );
    texList.push(['aux0', this.layers[0].aux]);
    texList.push(['aux1', this.layers[1].aux]);
    texList.push(['weights2', this.weightTex2]);
    this.bindTextures(this.progC, texList);
    gl.uniform2i(gl.getUniformLocation(this.progC, 'frameSize'), this.width, this.height);
    const bg = this.bundle.manifest.background;
    gl.uniform4f(gl.getUniformLocation(this.progC, 'background'), bg[0], bg[1], bg[2], 1);
    gl.bindFramebuffer(gl.FRAMEBUFFER, this.frameFbo);
    gl.drawArrays(gl.TRIANGLES, 0, 3);

    // blit to the canvas (row flip, optional parity heatmap)
    gl.useProgram(this.progBlit);
    this.bindTextures(this.progBlit, [
      ['frame', this.frameTex],
      ['reference', this.referenceTex],
    ]);
    gl.uniform1i(gl.getUniformLocation(this.progBlit, 'showDiff'), showDiff ? 1 : 0);
    gl.uniform2i(gl.getUniformLocation(this.progBlit, 'frameSize'), this.width, this.height);
    gl.bindFramebuffer(gl.FRAMEBUFFER, null);
    gl.drawArrays(gl.TRIANGLES, 0, 3);
    gl.bindVertexArray(null);
  }

  /** Read back the shaded frame (top row first), h*w*3 float32. */
  readFrame(): Float32Array {
    const gl = this.gl;
    gl.bindFramebuffer(gl.FRAMEBUFFER, this.frameFbo);
    const rgba = new Float32Array(this.width * this.height * 4);
    gl.readPixels(0, 0, this.width, this.height, gl.RGBA, gl.FLOAT, rgba);
    gl.bindFramebuffer(gl.FRAMEBUFFER, null);
    const rgb = new Float32Array(this.width * this.height * 3);
    for (let i = 0; i < this.width * this.height; i++) {
      rgb[i * 3] = rgba[i * 4];
      rgb[i * 3 + 1] = rgba[i * 4 + 1];
      rgb[i * 3 + 2] = rgba[i * 4 + 2];
    }
    return rgb;
  }

  private bindTextures(prog: WebGLProgram, list: [string, WebGLTexture][]): void {
    const gl = this.gl;
    list.forEach(([name, tex], unit) => {
      gl.activeTexture(gl.TEXTURE0 + unit);
      gl.bindTexture(gl.TEXTURE_2D, tex);
      gl.uniform1i(gl.getUniformLocation(prog, name), unit);
    });
  }
}
