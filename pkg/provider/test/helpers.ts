import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { PNG } from "pngjs";

export type PixelFn = (x: number, y: number) => [number, number, number];

export function makePng(width: number, height: number, fn: PixelFn): Buffer {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b] = fn(x, y);
      const i = 4 * (y * width + x);
      png.data[i] = r;
      png.data[i + 1] = g;
      png.data[i + 2] = b;
      png.data[i + 3] = 255;
    }
  }
  return PNG.sync.write(png);
}

/** Smooth per-image gradient so distinct seeds give distinct embeddings. */
export function gradientPng(seed: number, width = 32, height = 64): Buffer {
  return makePng(width, height, (x, y) => {
    const v = 128 + 100 * Math.sin((x / width + y / height) * (1 + (seed % 7)));
    const c = Math.max(0, Math.min(255, Math.round(v)));
    return [c, (c + 37 * seed) % 256, (c + 11 * seed) % 256];
  });
}

export function constantPng(value: number, width = 16, height = 32): Buffer {
  return makePng(width, height, () => [value, value, value]);
}

export function tempDir(prefix = "provider-test-"): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

export interface FixtureRow {
  imageId: string;
  png: Buffer;
  status?: string;
}

/** Write PNGs plus a harness-shaped stimulus manifest; returns the CSV path. */
export function writeFixture(dir: string, rows: FixtureRow[]): string {
  const lines = ["image_id,kind,level,level_index,path,status"];
  for (const row of rows) {
    const rel = `${row.imageId}.png`;
    writeFileSync(join(dir, rel), row.png);
    lines.push(
      `${row.imageId},identity,0,0,${rel},${row.status ?? "ok"}`,
    );
  }
  const csvPath = join(dir, "stimuli.csv");
  writeFileSync(csvPath, lines.join("\n") + "\n");
  return csvPath;
}
