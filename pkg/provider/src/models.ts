/**
 * Registry of deterministic image-feature models.
 *
 * Each model is pure CPU arithmetic over decoded pixels: given the same PNG
 * bytes and the same weights it always produces the same vector, so harness
 * runs are reproducible without any network access or stored checkpoints.
 * An optional weights file supplies a per-dimension scale applied before
 * normalization.
 */

import { readFileSync } from "node:fs";

import { RgbImage, resizeBilinear, toGray } from "./image";

export class ModelError extends Error {}

export interface EmbedModel {
  name: string;
  dim: number;
  /** Human-readable input policy, recorded in the file-mode sidecar. */
  resizePolicy: string;
  embed(img: RgbImage): Float32Array;
}

const GRID_W = 8;
const GRID_H = 16;
const GRID_IN_W = 32;
const GRID_IN_H = 64;
const HIST_BINS = 4; // per channel -> 64 dims

function l2normalize(v: Float32Array): Float32Array {
  let sq = 0;
  for (const x of v) sq += x * x;
  const norm = Math.sqrt(sq);
  if (norm > 0) {
    for (let i = 0; i < v.length; i++) v[i] /= norm;
  }
  return v;
}

function loadScale(weightsPath: string, dim: number): Float64Array {
  let parsed: unknown;
  try {
    parsed = JSON.parse(readFileSync(weightsPath, "utf-8"));
  } catch (err) {
    throw new ModelError(`weights ${weightsPath}: ${(err as Error).message}`);
  }
  const scale = (parsed as { scale?: unknown }).scale;
  if (!Array.isArray(scale) || scale.length !== dim ||
      !scale.every((x) => typeof x === "number" && Number.isFinite(x))) {
    throw new ModelError(
      `weights ${weightsPath}: expected {"scale": [${dim} finite numbers]}`,
    );
  }
  return Float64Array.from(scale as number[]);
}

/** Grayscale block-average grid over a fixed 32x64 resample; 128 dims. */
class GridModel implements EmbedModel {
  name = "grid";
  dim = GRID_W * GRID_H;
  resizePolicy =
    `bilinear resample to ${GRID_IN_W}x${GRID_IN_H} (WxH), RGB, then ` +
    `Rec.601 grayscale averaged over a ${GRID_W}x${GRID_H} grid`;

  constructor(private scale: Float64Array | null) {}

  embed(img: RgbImage): Float32Array {
    const gray = toGray(resizeBilinear(img, GRID_IN_W, GRID_IN_H));
    const bw = GRID_IN_W / GRID_W;
    const bh = GRID_IN_H / GRID_H;
    const out = new Float32Array(this.dim);
    for (let gy = 0; gy < GRID_H; gy++) {
      for (let gx = 0; gx < GRID_W; gx++) {
        let sum = 0;
        for (let y = gy * bh; y < (gy + 1) * bh; y++) {
          for (let x = gx * bw; x < (gx + 1) * bw; x++) {
            sum += gray[y * GRID_IN_W + x];
          }
        }
        const d = gy * GRID_W + gx;
        out[d] = sum / (bw * bh * 255);
        if (this.scale) out[d] *= this.scale[d];
      }
    }
    return l2normalize(out);
  }
}

/** Joint RGB histogram with 4 bins per channel; 64 dims, no resampling. */
class ColorHistModel implements EmbedModel {
  name = "colorhist";
  dim = HIST_BINS ** 3;
  resizePolicy = "none (histogram over the native resolution)";

  constructor(private scale: Float64Array | null) {}

  embed(img: RgbImage): Float32Array {
    const out = new Float32Array(this.dim);
    const n = img.width * img.height;
    for (let p = 0; p < n; p++) {
      const r = (img.data[3 * p] * HIST_BINS) >> 8;
      const g = (img.data[3 * p + 1] * HIST_BINS) >> 8;
      const b = (img.data[3 * p + 2] * HIST_BINS) >> 8;
      out[(r * HIST_BINS + g) * HIST_BINS + b] += 1;
    }
    if (n > 0) {
      for (let d = 0; d < this.dim; d++) out[d] /= n;
    }
    if (this.scale) {
      for (let d = 0; d < this.dim; d++) out[d] *= Number(this.scale[d]);
    }
    return l2normalize(out);
  }
}

const REGISTRY: Record<string, { dim: number; make: (s: Float64Array | null) => EmbedModel }> = {
  grid: { dim: GRID_W * GRID_H, make: (s) => new GridModel(s) },
  colorhist: { dim: HIST_BINS ** 3, make: (s) => new ColorHistModel(s) },
};

export const MODEL_NAMES = Object.keys(REGISTRY);

export function createModel(
  name: string,
  weightsPath?: string,
  device: string = "cpu",
): EmbedModel {
  if (device !== "cpu") {
    throw new ModelError(`unsupported device ${JSON.stringify(device)}; only "cpu"`);
  }
  const entry = REGISTRY[name];
  if (!entry) {
    throw new ModelError(
      `unknown model ${JSON.stringify(name)}; available: ${MODEL_NAMES.join(", ")}`,
    );
  }
  const scale = weightsPath ? loadScale(weightsPath, entry.dim) : null;
  return entry.make(scale);
}
