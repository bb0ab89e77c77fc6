/**
 * Frozen vision-language models for feature export.
 *
 * The mock model is a fully deterministic stand-in with the same contract
 * a real backbone adapter must satisfy: hierarchical patch grids per
 * depth, repeatable features for identical inputs, and a text tower with
 * unit-norm embeddings where related words land closer than noise. Real
 * checkpoints are not downloadable in the build environment, so the mock
 * is the default; new backends only need to implement VlmModel.
 */

import { SplitMix64, hash64 } from './rng.js';

export interface ImagePlanes {
  /** row-major [3, h, w], values in [0, 1] */
  data: Float64Array;
  width: number;
  height: number;
}

export interface StageFeatures {
  shape: [number, number, number];
  data: Float32Array;
}

export interface VlmModel {
  readonly id: string;
  readonly layerCount: number;
  readonly featureDim: number;
  readonly textDim: number;
  readonly patchSize: number;
  /** layer index a depth fraction maps to; throws SpecError when invalid */
  layerForDepth(fraction: number): number;
  /** patch grid [h, w] for a depth fraction at a given input size */
  gridForDepth(fraction: number, width: number, height: number): [number, number];
  /** features at one fusion depth */
  featuresAtDepth(image: ImagePlanes, fraction: number): StageFeatures;
  /** final-layer latent grid */
  latentFeatures(image: ImagePlanes): StageFeatures;
  embedText(name: string): Float64Array;
}

export class SpecError extends Error {}

/** Word clusters giving the mock text tower a drop of semantics. */
const LEXICON: Record<string, string[]> = {
  animal: ['cat', 'dog', 'horse', 'bird', 'fish', 'cow', 'sheep', 'lion', 'tiger', 'bear'],
  shape: ['rectangle', 'circle', 'triangle', 'square', 'oval', 'box'],
  color: ['red', 'green', 'blue', 'yellow', 'purple', 'orange'],
  scenery: ['background', 'sky', 'grass', 'road', 'wall', 'tree', 'water', 'canvas'],
};

export interface MockVlmOptions {
  seed?: number;
  featureDim?: number;
  textDim?: number;
  layerCount?: number;
}

export class MockVlm implements VlmModel {
  readonly id: string;
  readonly layerCount: number;
  readonly featureDim: number;
  readonly textDim: number;
  readonly patchSize = 16;
  private seed: number;

  constructor(opts: MockVlmOptions = {}) {
    this.seed = opts.seed ?? 0;
    this.featureDim = opts.featureDim ?? 32;
    this.textDim = opts.textDim ?? 24;
    this.layerCount = opts.layerCount ?? 12;
    this.id = `mock:${this.seed}`;
  }

  layerForDepth(fraction: number): number {
    if (!(fraction >= 0 && fraction < 1)) {
      throw new SpecError(`depth fraction ${fraction} outside [0, 1)`);
    }
    return Math.round(fraction * this.layerCount);
  }

  /** shallow taps keep 4x the base grid, middle taps 2x, deep taps 1x */
  gridForDepth(fraction: number, width: number, height: number): [number, number] {
    this.layerForDepth(fraction);
    if (width % this.patchSize || height % this.patchSize) {
      throw new SpecError(
        `image ${width}x${height} not divisible by patch size ${this.patchSize}`);
    }
    const scale = fraction < 3 / 8 ? 4 : fraction < 5 / 8 ? 2 : 1;
    return [(height / this.patchSize) * scale, (width / this.patchSize) * scale];
  }

  featuresAtDepth(image: ImagePlanes, fraction: number): StageFeatures {
    const layer = this.layerForDepth(fraction);
    const [gh, gw] = this.gridForDepth(fraction, image.width, image.height);
    return this.compute(image, gh, gw, layer);
  }

  latentFeatures(image: ImagePlanes): StageFeatures {
    const gh = image.height / this.patchSize;
    const gw = image.width / this.patchSize;
    return this.compute(image, gh, gw, this.layerCount);
  }

  /** pooled color planes pushed through seeded channel mixes, one per layer */
  private compute(image: ImagePlanes, gh: number, gw: number, layer: number): StageFeatures {
    const pooled = poolPlanes(image, gh, gw);
    const d = this.featureDim;
    let feats: Float64Array = new Float64Array(d * gh * gw);
    const lift = this.matrix('lift', d, 3);
    applyChannelMap(lift, pooled, 3, feats, d, gh * gw);
    for (let l = 0; l < layer; l++) {
      const mix = this.matrix(`layer${l}`, d, d);
      const next = new Float64Array(d * gh * gw);
      applyChannelMap(mix, feats, d, next, d, gh * gw);
      for (let i = 0; i < next.length; i++) next[i] = Math.tanh(next[i]);
      feats = blendNeighbours(next, d, gh, gw, 0.25);
    }
    return { shape: [d, gh, gw], data: Float32Array.from(feats) };
  }

  private matrix(tag: string, rows: number, cols: number): Float64Array {
    const rng = new SplitMix64(hash64(`${this.id}/${tag}`) ^ BigInt(this.seed));
    const m = new Float64Array(rows * cols);
    const scale = 1 / Math.sqrt(cols);
    for (let i = 0; i < m.length; i++) m[i] = rng.normal() * scale;
    return m;
  }

  embedText(name: string): Float64Array {
    const d = this.textDim;
    const v = new Float64Array(d);
    const word = name.toLowerCase().replace(/[^a-z ]/g, '');
    const padded = `^${word}$`;
    for (let i = 0; i + 3 <= padded.length; i++) {
      addDirection(v, `tri:${padded.slice(i, i + 3)}`, 1.0, this.seed);
    }
    for (const [cluster, members] of Object.entries(LEXICON)) {
      if (members.some((m) => word === m || word.includes(m))) {
        addDirection(v, `cluster:${cluster}`, 2.5, this.seed);
      }
    }
    let norm = Math.hypot(...v);
    if (norm < 1e-12) {
      addDirection(v, 'empty', 1.0, this.seed);
      norm = Math.hypot(...v);
    }
    for (let i = 0; i < d; i++) v[i] /= norm;
    return v;
  }
}

function addDirection(acc: Float64Array, tag: string, weight: number, seed: number) {
  const rng = new SplitMix64(hash64(tag) ^ BigInt(seed));
  const dir = new Float64Array(acc.length);
  let norm = 0;
  for (let i = 0; i < dir.length; i++) {
    dir[i] = rng.normal();
    norm += dir[i] * dir[i];
  }
  norm = Math.sqrt(norm) || 1;
  for (let i = 0; i < acc.length; i++) acc[i] += (weight * dir[i]) / norm;
}

function poolPlanes(image: ImagePlanes, gh: number, gw: number): Float64Array {
  const { data, width, height } = image;
  const out = new Float64Array(3 * gh * gw);
  const cellH = height / gh;
  const cellW = width / gw;
  for (let c = 0; c < 3; c++) {
    for (let gy = 0; gy < gh; gy++) {
      for (let gx = 0; gx < gw; gx++) {
        let sum = 0;
        let count = 0;
        const y0 = Math.floor(gy * cellH);
        const y1 = Math.floor((gy + 1) * cellH);
        const x0 = Math.floor(gx * cellW);
        const x1 = Math.floor((gx + 1) * cellW);
        for (let y = y0; y < y1; y++) {
          for (let x = x0; x < x1; x++) {
            sum += data[c * width * height + y * width + x];
            count++;
          }
        }
        out[c * gh * gw + gy * gw + gx] = sum / Math.max(count, 1);
      }
    }
  }
  return out;
}

function applyChannelMap(
  m: Float64Array, src: Float64Array, srcC: number,
  dst: Float64Array, dstC: number, positions: number,
) {
  for (let p = 0; p < positions; p++) {
    for (let o = 0; o < dstC; o++) {
      let acc = 0;
      for (let i = 0; i < srcC; i++) {
        acc += m[o * srcC + i] * src[i * positions + p];
      }
      dst[o * positions + p] = acc;
    }
  }
}

function blendNeighbours(
  src: Float64Array, c: number, h: number, w: number, alpha: number,
): Float64Array {
  const out = new Float64Array(src.length);
  for (let ch = 0; ch < c; ch++) {
    const base = ch * h * w;
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const i = base + y * w + x;
        let acc = 0;
        let n = 0;
        if (y > 0) { acc += src[i - w]; n++; }
        if (y < h - 1) { acc += src[i + w]; n++; }
        if (x > 0) { acc += src[i - 1]; n++; }
        if (x < w - 1) { acc += src[i + 1]; n++; }
        out[i] = (1 - alpha) * src[i] + (n ? (alpha * acc) / n : 0);
      }
    }
  }
  return out;
}

export function makeModel(spec: string): VlmModel {
  const [kind, seedText] = spec.split(':');
  if (kind !== 'mock') {
    throw new SpecError(
      `unknown model '${kind}'; available: mock:<seed> (real checkpoints need a VlmModel adapter)`);
  }
  return new MockVlm({ seed: seedText ? Number(seedText) : 0 });
}
