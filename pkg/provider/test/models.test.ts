import { writeFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { decodePng } from "../src/image";
import { createModel, MODEL_NAMES, ModelError } from "../src/models";

import { constantPng, gradientPng, tempDir } from "./helpers";

describe.each(MODEL_NAMES)("model %s", (name) => {
  const model = createModel(name);

  it("is deterministic for identical bytes", () => {
    const img = decodePng(gradientPng(3));
    expect([...model.embed(img)]).toEqual([...model.embed(img)]);
  });

  it("produces identical vectors for identical constant images", () => {
    const a = model.embed(decodePng(constantPng(131)));
    const b = model.embed(decodePng(constantPng(131, 48, 24)));
    // constant pixels survive any resample, so even different sizes agree
    expect([...a]).toEqual([...b]);
  });

  it("emits unit-norm vectors of the declared dim", () => {
    for (const seed of [0, 1, 5]) {
      const v = model.embed(decodePng(gradientPng(seed)));
      expect(v.length).toBe(model.dim);
      const norm = Math.hypot(...v);
      expect(norm).toBeCloseTo(1.0, 6);
    }
  });

  it("separates dissimilar images", () => {
    const a = model.embed(decodePng(gradientPng(1)));
    const b = model.embed(decodePng(constantPng(10)));
    let dot = 0;
    for (let i = 0; i < a.length; i++) dot += a[i] * b[i];
    expect(dot).toBeLessThan(0.999);
  });
});

describe("weights", () => {
  it("applies a per-dimension scale before normalization", () => {
    const dir = tempDir();
    const model = createModel("colorhist");
    const scale = Array.from({ length: model.dim }, (_, i) => (i % 2 ? 2 : 1));
    const weights = join(dir, "w.json");
    writeFileSync(weights, JSON.stringify({ scale }));
    const img = decodePng(gradientPng(2));
    const plain = createModel("colorhist").embed(img);
    const scaled = createModel("colorhist", weights).embed(img);
    expect([...scaled]).not.toEqual([...plain]);
    expect(Math.hypot(...scaled)).toBeCloseTo(1.0, 6);
  });

  it("rejects malformed weights files", () => {
    const dir = tempDir();
    const weights = join(dir, "w.json");
    writeFileSync(weights, JSON.stringify({ scale: [1, 2, 3] }));
    expect(() => createModel("grid", weights)).toThrow(ModelError);
    writeFileSync(weights, "not json");
    expect(() => createModel("grid", weights)).toThrow(ModelError);
  });
});

describe("registry", () => {
  it("rejects unknown models and non-cpu devices", () => {
    expect(() => createModel("resnet-900")).toThrow(/unknown model/);
    expect(() => createModel("grid", undefined, "cuda")).toThrow(/device/);
  });
});
