/** PNG decoding and the pixel-level helpers the feature models share. */

import { PNG } from "pngjs";

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB triples, length = width * height * 3. */
  data: Uint8Array;
}

export class ImageError extends Error {}

export function decodePng(buffer: Buffer): RgbImage {
  let png: PNG;
  try {
    png = PNG.sync.read(buffer);
  } catch (err) {
    throw new ImageError(`PNG decode failed: ${(err as Error).message}`);
  }
  const { width, height, data } = png;
  const rgb = new Uint8Array(width * height * 3);
  for (let p = 0; p < width * height; p++) {
    rgb[3 * p] = data[4 * p];
    rgb[3 * p + 1] = data[4 * p + 1];
    rgb[3 * p + 2] = data[4 * p + 2];
  }
  return { width, height, data: rgb };
}

/** Bilinear resample to the target size; edge pixels are clamped. */
export function resizeBilinear(img: RgbImage, width: number, height: number): RgbImage {
  if (img.width < 1 || img.height < 1) {
    throw new ImageError("cannot resize empty image");
  }
  const out = new Uint8Array(width * height * 3);
  const sx = img.width / width;
  const sy = img.height / height;
  for (let y = 0; y < height; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, img.height - 1);
    const y0 = Math.max(Math.floor(fy), 0);
    const y1 = Math.min(y0 + 1, img.height - 1);
    const wy = Math.max(fy - y0, 0);
    for (let x = 0; x < width; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, img.width - 1);
      const x0 = Math.max(Math.floor(fx), 0);
      const x1 = Math.min(x0 + 1, img.width - 1);
      const wx = Math.max(fx - x0, 0);
      for (let c = 0; c < 3; c++) {
        const p00 = img.data[3 * (y0 * img.width + x0) + c];
        const p01 = img.data[3 * (y0 * img.width + x1) + c];
        const p10 = img.data[3 * (y1 * img.width + x0) + c];
        const p11 = img.data[3 * (y1 * img.width + x1) + c];
        const top = p00 + (p01 - p00) * wx;
        const bot = p10 + (p11 - p10) * wx;
        out[3 * (y * width + x) + c] = Math.round(top + (bot - top) * wy);
      }
    }
  }
  return { width, height, data: out };
}

/** Rec.601 luma, one float per pixel in [0, 255]. */
export function toGray(img: RgbImage): Float64Array {
  const gray = new Float64Array(img.width * img.height);
  for (let p = 0; p < gray.length; p++) {
    gray[p] =
      0.299 * img.data[3 * p] +
      0.587 * img.data[3 * p + 1] +
      0.114 * img.data[3 * p + 2];
  }
  return gray;
}
