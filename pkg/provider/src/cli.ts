#!/usr/bin/env node
/**
 * psyreid-provider: reference embedding provider for the psyreid harness.
 *
 * File mode (harness appends the two positionals):
 *   psyreid-provider [--model NAME] [--weights FILE] [--device cpu] <stimuli_csv> <out_emb1>
 * Streaming mode:
 *   psyreid-provider [--model NAME] [--weights FILE] [--device cpu] stream
 */

import { parseArgs } from "node:util";

import { provideFile } from "./fileMode";
import { ImageError } from "./image";
import { ManifestError } from "./manifest";
import { createModel, MODEL_NAMES, ModelError } from "./models";
import { provideStream, StreamError } from "./stream";

const EXIT_USAGE = 2;
const EXIT_PROTOCOL = 1;

function usage(): string {
  return [
    "usage: psyreid-provider [--model NAME] [--weights FILE] [--device cpu]",
    "                        (<stimuli_csv> <out_emb1> | stream)",
    `models: ${MODEL_NAMES.join(", ")}`,
  ].join("\n");
}

export async function main(argv: string[]): Promise<number> {
  let args;
  try {
    args = parseArgs({
      args: argv,
      options: {
        model: { type: "string", default: "grid" },
        weights: { type: "string" },
        device: { type: "string", default: "cpu" },
        help: { type: "boolean", default: false },
      },
      allowPositionals: true,
    });
  } catch (err) {
    process.stderr.write(`${(err as Error).message}\n${usage()}\n`);
    return EXIT_USAGE;
  }
  if (args.values.help) {
    process.stdout.write(`${usage()}\n`);
    return 0;
  }
  try {
    const model = createModel(
      args.values.model as string,
      args.values.weights as string | undefined,
      args.values.device as string,
    );
    const pos = args.positionals;
    if (pos.length === 1 && pos[0] === "stream") {
      const served = await provideStream(model, process.stdin, process.stdout);
      process.stderr.write(`served ${served} frames\n`);
      return 0;
    }
    if (pos.length === 2) {
      const result = provideFile(pos[0], pos[1], model);
      process.stderr.write(
        `embedded ${result.ok} rows (${result.failed} failed, ` +
          `${result.skipped} skipped); sidecar: ${result.sidecarPath}\n`,
      );
      return 0;
    }
    process.stderr.write(`${usage()}\n`);
    return EXIT_USAGE;
  } catch (err) {
    if (err instanceof ModelError || err instanceof ManifestError) {
      process.stderr.write(`error: ${err.message}\n`);
      return EXIT_USAGE;
    }
    if (err instanceof StreamError || err instanceof ImageError) {
      process.stderr.write(`protocol error: ${err.message}\n`);
      return EXIT_PROTOCOL;
    }
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return EXIT_PROTOCOL;
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
