/** Stimulus manifest parsing for file mode. */

import { readFileSync } from "node:fs";
import { dirname, isAbsolute, resolve } from "node:path";

import Papa from "papaparse";

export class ManifestError extends Error {}

export interface StimulusRow {
  imageId: string;
  /** Absolute path; relative manifest paths resolve against the CSV. */
  path: string;
  /** "ok" unless the harness marked the row failed upstream. */
  status: string;
}

export function readStimulusManifest(csvPath: string): StimulusRow[] {
  const text = readFileSync(csvPath, "utf-8");
  const parsed = Papa.parse<Record<string, string>>(text, {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new ManifestError(`${csvPath}: row ${e.row}: ${e.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  for (const required of ["image_id", "path"]) {
    if (!fields.includes(required)) {
      throw new ManifestError(`${csvPath}: missing column ${required}`);
    }
  }
  const base = dirname(resolve(csvPath));
  const seen = new Set<string>();
  return parsed.data.map((row, i) => {
    const imageId = row.image_id ?? "";
    if (!imageId) {
      throw new ManifestError(`${csvPath}: row ${i}: empty image_id`);
    }
    if (seen.has(imageId)) {
      throw new ManifestError(`${csvPath}: duplicate image_id ${imageId}`);
    }
    seen.add(imageId);
    const raw = row.path ?? "";
    return {
      imageId,
      path: isAbsolute(raw) ? raw : resolve(base, raw),
      status: row.status ?? "ok",
    };
  });
}
