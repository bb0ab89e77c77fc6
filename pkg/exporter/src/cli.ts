#!/usr/bin/env node
/** CLI: export frozen-model feature pyramids and class-name text embeddings. */

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { DEFAULT_DEPTHS, exportFeatures, textEmbeddingsFromManifest,
         exportTextEmbeddings } from './export.js';
import { makeModel, SpecError } from './model.js';
import { ManifestError } from './manifest.js';

function parseDepths(text?: string): number[] {
  if (!text) return DEFAULT_DEPTHS;
  return text.split(',').map(Number);
}

async function main(): Promise<number> {
  try {
    await yargs(hideBin(process.argv))
      .command(
        'export-features',
        'extract per-image feature pyramids for a dataset manifest',
        (y) => y
          .option('manifest', { type: 'string', demandOption: true,
                                describe: 'dataset manifest (tab-separated)' })
          .option('out-dir', { type: 'string', demandOption: true })
          .option('model', { type: 'string', default: 'mock:0',
                             describe: 'model spec, e.g. mock:42' })
          .option('depths', { type: 'string',
                              describe: 'comma list of 4 fusion depth fractions' }),
        (argv) => {
          const spec = {
            model: makeModel(argv.model),
            depths: parseDepths(argv.depths),
            outDir: argv.outDir,
          };
          const result = exportFeatures(argv.manifest, spec);
          console.log(result.manifestPath);
          console.log(`${result.featureFiles.length} feature files`);
        })
      .command(
        'export-text',
        'embed class names into one FPT1 table',
        (y) => y
          .option('manifest', { type: 'string',
                                describe: 'take class names from this manifest' })
          .option('names', { type: 'string',
                             describe: 'comma list of class names (alternative)' })
          .option('model', { type: 'string', default: 'mock:0' })
          .option('out', { type: 'string', demandOption: true }),
        (argv) => {
          const model = makeModel(argv.model);
          if (argv.manifest) {
            const names = textEmbeddingsFromManifest(argv.manifest, model, argv.out);
            console.log(`${names.length} classes -> ${argv.out}`);
          } else if (argv.names) {
            const names = argv.names.split(',').filter((n) => n.length);
            exportTextEmbeddings(names, model, argv.out);
            console.log(`${names.length} classes -> ${argv.out}`);
          } else {
            throw new SpecError('provide --manifest or --names');
          }
        })
      .demandCommand(1)
      .strict()
      .fail((msg, err) => { throw err ?? new Error(msg); })
      .parseAsync();
    return 0;
  } catch (err) {
    if (err instanceof SpecError) {
      console.error(`spec error: ${err.message}`);
      return 2;
    }
    if (err instanceof ManifestError) {
      console.error(`manifest error: ${err.message}`);
      return 3;
    }
    throw err;
  }
}

main().then((code) => process.exit(code));
