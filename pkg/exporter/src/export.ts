/**
 * Export drivers: frozen feature pyramids per image, and one text
 * embedding table per class list. Output files use the FPT1 layout the
 * training side reads natively.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import { PNG } from 'pngjs';

import { writeFpt1, NamedTensor } from './fpt1.js';
import { loadManifest, writeManifest, orderedClassNames, Manifest } from './manifest.js';
import { ImagePlanes, SpecError, VlmModel } from './model.js';

export interface ExportSpec {
  model: VlmModel;
  /** fusion depth fractions; the last three become the exported pyramid */
  depths: number[];
  outDir: string;
}

export const DEFAULT_DEPTHS = [0, 0.25, 0.5, 0.75];
const PYRAMID_NAMES = ['f_clip_early', 'f_clip_mid', 'f_clip_late'] as const;

export function validateSpec(spec: ExportSpec): void {
  if (spec.depths.length !== 4) {
    throw new SpecError(`expected 4 fusion depths, got ${spec.depths.length}`);
  }
  const layers = spec.depths.map((f) => spec.model.layerForDepth(f));
  if (new Set(layers).size !== layers.length) {
    throw new SpecError(
      `depth fractions ${spec.depths} collapse onto layers ${layers}`);
  }
}

export function loadPng(file: string): ImagePlanes {
  const png = PNG.sync.read(fs.readFileSync(file));
  const { width, height } = png;
  const planes = new Float64Array(3 * width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const src = (y * width + x) * 4;
      for (let c = 0; c < 3; c++) {
        planes[c * width * height + y * width + x] = png.data[src + c] / 255;
      }
    }
  }
  return { data: planes, width, height };
}

/** feature tensors for one image: pyramid taps at the last 3 depths + latent */
export function pyramidTensors(image: ImagePlanes, spec: ExportSpec): NamedTensor[] {
  const stageDepths = spec.depths.slice(1);
  const tensors: NamedTensor[] = stageDepths.map((fraction, i) => {
    const feats = spec.model.featuresAtDepth(image, fraction);
    return { name: PYRAMID_NAMES[i], dtype: 'float32' as const,
             shape: feats.shape, data: feats.data };
  });
  const latent = spec.model.latentFeatures(image);
  tensors.push({ name: 'f_clip_latent', dtype: 'float32',
                 shape: latent.shape, data: latent.data });
  return tensors;
}

export interface FeatureExportResult {
  manifestPath: string;
  featureFiles: string[];
}

/**
 * Extract features for every sample of a dataset manifest. Writes one
 * FPT1 file per image into outDir and a new manifest whose sample rows
 * carry the feature-file column.
 */
export function exportFeatures(manifestPath: string, spec: ExportSpec): FeatureExportResult {
  validateSpec(spec);
  const manifest = loadManifest(manifestPath);
  fs.mkdirSync(spec.outDir, { recursive: true });
  const featureFiles: string[] = [];
  const updated: Manifest = { ...manifest, samples: [] };
  for (const sample of manifest.samples) {
    const image = loadPng(path.join(manifest.root, sample.imagePath));
    const tensors = pyramidTensors(image, spec);
    const outFile = path.join(spec.outDir, `${sample.id}.fpt1`);
    fs.writeFileSync(outFile, writeFpt1(tensors));
    featureFiles.push(outFile);
    updated.samples.push({
      ...sample,
      featurePath: path.relative(manifest.root, outFile),
    });
  }
  const outManifest = path.join(spec.outDir, 'manifest.tsv');
  // feature paths are relative to the manifest location
  const rebased: Manifest = {
    classes: manifest.classes,
    root: spec.outDir,
    samples: updated.samples.map((s) => ({
      ...s,
      imagePath: path.relative(spec.outDir, path.join(manifest.root, s.imagePath)),
      labelPath: path.relative(spec.outDir, path.join(manifest.root, s.labelPath)),
      featurePath: path.relative(spec.outDir,
                                 path.join(manifest.root, s.featurePath!)),
    })),
  };
  writeManifest(outManifest, rebased);
  return { manifestPath: outManifest, featureFiles };
}

/** One unit-norm embedding row per class name, row order = class id order. */
export function exportTextEmbeddings(classNames: string[], model: VlmModel,
                                     outFile: string): void {
  if (classNames.length === 0) {
    throw new SpecError('empty class list');
  }
  const d = model.textDim;
  const table = new Float32Array(classNames.length * d);
  classNames.forEach((name, i) => {
    const row = model.embedText(name);
    table.set(Float32Array.from(row), i * d);
  });
  fs.mkdirSync(path.dirname(path.resolve(outFile)), { recursive: true });
  fs.writeFileSync(outFile, writeFpt1([
    { name: 'text_embeddings', dtype: 'float32',
      shape: [classNames.length, d], data: table },
  ]));
}

export function textEmbeddingsFromManifest(manifestPath: string, model: VlmModel,
                                           outFile: string): string[] {
  const names = orderedClassNames(loadManifest(manifestPath));
  exportTextEmbeddings(names, model, outFile);
  return names;
}
