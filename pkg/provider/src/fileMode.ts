/**
 * File mode: embed every stimulus row and write one EMB1 file.
 *
 * Output order equals manifest order. A sidecar text file next to the output
 * records the model's input resize policy and any rows that could not be
 * embedded; a bad row is reported there and skipped, never fatal.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { EmbeddingRecord, encodeEmb1 } from "./emb1";
import { decodePng } from "./image";
import { readStimulusManifest } from "./manifest";
import { EmbedModel } from "./models";

export interface FileModeResult {
  ok: number;
  failed: number;
  skipped: number;
  sidecarPath: string;
}

export function sidecarPathFor(outPath: string): string {
  return `${outPath}.sidecar.txt`;
}

export function provideFile(
  manifestPath: string,
  outPath: string,
  model: EmbedModel,
): FileModeResult {
  const rows = readStimulusManifest(manifestPath);
  const records: EmbeddingRecord[] = [];
  const notes: string[] = [];
  let failed = 0;
  let skipped = 0;
  for (const row of rows) {
    if (row.status !== "ok") {
      skipped++;
      notes.push(`skipped\t${row.imageId}\tstatus=${row.status}`);
      continue;
    }
    try {
      const img = decodePng(readFileSync(row.path));
      records.push({ id: row.imageId, vector: model.embed(img) });
    } catch (err) {
      failed++;
      notes.push(`failed\t${row.imageId}\t${(err as Error).message}`);
    }
  }
  writeFileSync(outPath, encodeEmb1(records, model.dim));
  const sidecar = sidecarPathFor(outPath);
  writeFileSync(
    sidecar,
    [
      `model: ${model.name}`,
      `dim: ${model.dim}`,
      `input: ${model.resizePolicy}`,
      `rows: ${records.length} ok, ${failed} failed, ${skipped} skipped`,
      ...notes,
      "",
    ].join("\n"),
  );
  return { ok: records.length, failed, skipped, sidecarPath: sidecar };
}
