/** Reader/writer for the training side's tab-separated dataset manifest:
 * "@class\tid\tname" rows define the label table, sample rows carry
 * id, image path, label path and optionally a feature-file path. */

import * as fs from 'node:fs';
import * as path from 'node:path';

export interface ManifestSample {
  id: string;
  imagePath: string;
  labelPath: string;
  featurePath?: string;
}

export interface Manifest {
  classes: Map<number, string>;
  samples: ManifestSample[];
  root: string;
}

export class ManifestError extends Error {}

export function loadManifest(file: string): Manifest {
  const root = path.dirname(path.resolve(file));
  const classes = new Map<number, string>();
  const samples: ManifestSample[] = [];
  const text = fs.readFileSync(file, 'utf-8');
  text.split('\n').forEach((raw, lineno) => {
    const line = raw.trim();
    if (!line || line.startsWith('#')) return;
    const fields = line.split('\t');
    if (fields[0] === '@class') {
      if (fields.length !== 3) {
        throw new ManifestError(`${file}:${lineno + 1}: malformed @class line`);
      }
      classes.set(Number(fields[1]), fields[2]);
    } else if (fields.length === 3 || fields.length === 4) {
      samples.push({
        id: fields[0],
        imagePath: fields[1],
        labelPath: fields[2],
        featurePath: fields[3],
      });
    } else {
      throw new ManifestError(
        `${file}:${lineno + 1}: expected 3 or 4 fields, got ${fields.length}`);
    }
  });
  return { classes, samples, root };
}

export function writeManifest(file: string, manifest: Manifest): void {
  const lines = ['# dataset manifest: tab-separated, @class lines define the label table'];
  for (const id of [...manifest.classes.keys()].sort((a, b) => a - b)) {
    lines.push(`@class\t${id}\t${manifest.classes.get(id)}`);
  }
  for (const s of manifest.samples) {
    const fields = [s.id, s.imagePath, s.labelPath];
    if (s.featurePath) fields.push(s.featurePath);
    lines.push(fields.join('\t'));
  }
  fs.writeFileSync(file, lines.join('\n') + '\n');
}

/** class names ordered by dense id, validating density from 0 */
export function orderedClassNames(manifest: Manifest): string[] {
  const ids = [...manifest.classes.keys()].sort((a, b) => a - b);
  ids.forEach((id, i) => {
    if (id !== i) {
      throw new ManifestError(`class ids must be dense from 0, got ${ids}`);
    }
  });
  return ids.map((id) => manifest.classes.get(id)!);
}
