/**
 * GLSL sources for the three render passes.
 *
 * Pass A rasterizes one mesh layer into float targets: two RGBA feature
 * textures (8 feature channels) and an aux target carrying the hit mask.
 * Pass B applies convolution layer 1 with the view-direction sin/cos
 * encoding computed in the fragment shader; pass C applies layer 2 plus
 * the sigmoid. Both conv passes use the forward-offset 2x2 footprint with
 * zero padding past the image, identical to the training-side kernels.
 *
 * All intermediate targets store image row 0 (top) in texture row 0, so
 * texelFetch coordinates equal CPU pixel coordinates.
 */

export const PASS_A_VERT = `#version 300 es
layout(location = 0) in vec3 position;
layout(location = 1) in vec4 featA;
layout(location = 2) in vec4 featB;
uniform mat4 worldToClip;
out vec4 vFeatA;
out vec4 vFeatB;
void main() {
  vFeatA = featA;
  vFeatB = featB;
  gl_Position = worldToClip * vec4(position, 1.0);
}
`;

export const PASS_A_FRAG = `#version 300 es
precision highp float;
in vec4 vFeatA;
in vec4 vFeatB;
layout(location = 0) out vec4 outFeatA;
layout(location = 1) out vec4 outFeatB;
layout(location = 2) out vec4 outAux;
void main() {
  outFeatA = vFeatA;
  outFeatB = vFeatB;
  outAux = vec4(1.0, 0.0, 0.0, 0.0); // hit mask
}
`;

export const QUAD_VERT = `#version 300 es
layout(location = 0) in vec2 corner;
void main() {
  gl_Position = vec4(corner, 0.0, 1.0);
}
`;

/**
 * Pass B (conv layer 1 + ReLU). Emits HIDDEN channels as RGBA chunks;
 * chunkBase selects which 4*N output channels this draw computes, so the
 * pass also works on devices with only 4 draw buffers.
 */
export function passBFrag(peLevels: number, drawBuffers: number): string {
  const outs = Array.from(
    { length: drawBuffers },
    (_, i) => `layout(location = ${i}) out vec4 outChunk${i};`,
  ).join('\n');
  const writes = Array.from(
    { length: drawBuffers },
    (_, i) => `  outChunk${i} = acc[${i}];`,
  ).join('\n');
  return `#version 300 es
precision highp float;
precision highp sampler2D;

uniform sampler2D feat0A;
uniform sampler2D feat0B;
uniform sampler2D aux0;
uniform sampler2D feat1A;
uniform sampler2D feat1B;
uniform sampler2D aux1;
uniform sampler2D weights1;   // (outCh+1) rows x inCh cols, taps in xyzw
uniform ivec2 frameSize;
uniform int chunkBase;        // first output channel of this draw / 4
uniform vec4 camCenter;       // xyz used
uniform mat3 camRotT;         // transpose(R): camera->world
uniform vec4 intrinsics;      // fx, fy, cx, cy

${outs}

const int PE_LEVELS = ${peLevels};
const int F = 8;

vec3 rayDir(ivec2 p) {
  vec2 dc = (vec2(p) + 0.5 - intrinsics.zw) / intrinsics.xy;
  return normalize(camRotT * vec3(dc, 1.0));
}

// accumulate one input channel value against the 2x2 weight taps, but only
// for the taps whose source pixel matches (dx, dy)
void tapAcc(inout vec4 acc[${drawBuffers}], float v, int ci, int a, int b) {
  if (v == 0.0) return;
  for (int chunk = 0; chunk < ${drawBuffers}; chunk++) {
    for (int comp = 0; comp < 4; comp++) {
      int co = (chunkBase + chunk) * 4 + comp;
      vec4 taps = texelFetch(weights1, ivec2(ci, co), 0);
      // taps = ((0,0), (1,0), (0,1), (1,1)) as (a,b) pairs
      float w = (a == 0) ? ((b == 0) ? taps.x : taps.z)
                         : ((b == 0) ? taps.y : taps.w);
      acc[chunk][comp] += v * w;
    }
  }
}

void main() {
  ivec2 p = ivec2(gl_FragCoord.xy);
  vec4 acc[${drawBuffers}];
  for (int chunk = 0; chunk < ${drawBuffers}; chunk++) {
    for (int comp = 0; comp < 4; comp++) {
      int co = (chunkBase + chunk) * 4 + comp;
      int biasRow = textureSize(weights1, 0).y - 1;
      acc[chunk][comp] = texelFetch(weights1, ivec2(co / 4, biasRow), 0)[co % 4];
    }
  }

  for (int a = 0; a < 2; a++) {
    for (int b = 0; b < 2; b++) {
      ivec2 q = p + ivec2(b, a);
      if (q.x >= frameSize.x || q.y >= frameSize.y) continue; // zero pad
      vec4 f0a = texelFetch(feat0A, q, 0);
      vec4 f0b = texelFetch(feat0B, q, 0);
      vec4 f1a = texelFetch(feat1A, q, 0);
      vec4 f1b = texelFetch(feat1B, q, 0);
      float m0 = texelFetch(aux0, q, 0).x;
      float m1 = texelFetch(aux1, q, 0).x;
      for (int k = 0; k < 4; k++) {
        tapAcc(acc, f0a[k], k, a, b);
        tapAcc(acc, f0b[k], 4 + k, a, b);
        tapAcc(acc, f1a[k], F + k, a, b);
        tapAcc(acc, f1b[k], F + 4 + k, a, b);
      }
      tapAcc(acc, m0, 2 * F, a, b);
      tapAcc(acc, m1, 2 * F + 1, a, b);
      // encoded view direction, computed in-shader
      vec3 d = rayDir(q);
      int ci = 2 * F + 2;
      tapAcc(acc, d.x, ci, a, b);
      tapAcc(acc, d.y, ci + 1, a, b);
      tapAcc(acc, d.z, ci + 2, a, b);
      ci += 3;
      float s = 1.0;
      for (int l = 0; l < PE_LEVELS; l++) {
        vec3 sd = s * d;
        tapAcc(acc, sin(sd.x), ci, a, b);
        tapAcc(acc, sin(sd.y), ci + 1, a, b);
        tapAcc(acc, sin(sd.z), ci + 2, a, b);
        tapAcc(acc, cos(sd.x), ci + 3, a, b);
        tapAcc(acc, cos(sd.y), ci + 4, a, b);
        tapAcc(acc, cos(sd.z), ci + 5, a, b);
        ci += 6;
        s *= 2.0;
      }
    }
  }

  for (int chunk = 0; chunk < ${drawBuffers}; chunk++) {
    acc[chunk] = max(acc[chunk], vec4(0.0)); // ReLU
  }
${writes}
}
`;
}

/** Pass C (conv layer 2 + sigmoid + background compositing). */
export function passCFrag(hiddenChunks: number): string {
  const samplers = Array.from(
    { length: hiddenChunks },
    (_, i) => `uniform sampler2D hidden${i};`,
  ).join('\n');
  const fetches = Array.from(
    { length: hiddenChunks },
    (_, i) => `      h[${i}] = texelFetch(hidden${i}, q, 0);`,
  ).join('\n');
  return `#version 300 es
precision highp float;
precision highp sampler2D;

${samplers}
uniform sampler2D aux0;
uniform sampler2D aux1;
uniform sampler2D weights2;  // 4 rows (3 out + bias) x 32 cols
uniform ivec2 frameSize;
uniform vec4 background;
layout(location = 0) out vec4 outColor;

void main() {
  ivec2 p = ivec2(gl_FragCoord.xy);
  int biasRow = textureSize(weights2, 0).y - 1;
  vec3 acc = vec3(
    texelFetch(weights2, ivec2(0, biasRow), 0).x,
    texelFetch(weights2, ivec2(0, biasRow), 0).y,
    texelFetch(weights2, ivec2(0, biasRow), 0).z);

  vec4 h[${hiddenChunks}];
  for (int a = 0; a < 2; a++) {
    for (int b = 0; b < 2; b++) {
      ivec2 q = p + ivec2(b, a);
      if (q.x >= frameSize.x || q.y >= frameSize.y) continue;
${fetches}
      for (int ci = 0; ci < ${hiddenChunks * 4}; ci++) {
        float v = h[ci / 4][ci % 4];
        if (v == 0.0) continue;
        for (int co = 0; co < 3; co++) {
          vec4 taps = texelFetch(weights2, ivec2(ci, co), 0);
          float w = (a == 0) ? ((b == 0) ? taps.x : taps.z)
                             : ((b == 0) ? taps.y : taps.w);
          acc[co] += v * w;
        }
      }
    }
  }
  vec3 rgb = 1.0 / (1.0 + exp(-acc));
  float anyHit = max(texelFetch(aux0, p, 0).x, texelFetch(aux1, p, 0).x);
  outColor = vec4(mix(background.rgb, rgb, anyHit), 1.0);
}
`;
}

/** Blit to the canvas (flips rows for display) with optional diff overlay. */
export const BLIT_FRAG = `#version 300 es
precision highp float;
uniform sampler2D frame;
uniform sampler2D reference;
uniform int showDiff;
uniform ivec2 frameSize;
layout(location = 0) out vec4 outColor;
void main() {
  ivec2 p = ivec2(gl_FragCoord.xy);
  ivec2 src = ivec2(p.x, frameSize.y - 1 - p.y);
  vec3 rgb = texelFetch(frame, src, 0).rgb;
  if (showDiff == 1) {
    vec3 ref = texelFetch(reference, src, 0).rgb;
    float d = max(max(abs(rgb.r - ref.r), abs(rgb.g - ref.g)), abs(rgb.b - ref.b));
    // heatmap: green <= 2/255 < yellow < 8/255 < red
    vec3 heat = d <= 2.0 / 255.0 ? vec3(0.0, d * 60.0, 0.0)
              : d <= 8.0 / 255.0 ? vec3(d * 20.0, d * 20.0, 0.0)
              : vec3(min(1.0, d * 4.0), 0.0, 0.0);
    outColor = vec4(heat, 1.0);
  } else {
    outColor = vec4(rgb, 1.0);
  }
}
`;
