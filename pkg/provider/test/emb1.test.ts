import { describe, expect, it } from "vitest";

import { decodeEmb1, Emb1Error, encodeEmb1 } from "../src/emb1";

function vec(...vals: number[]): Float32Array {
  return Float32Array.from(vals);
}

describe("encode/decode round trip", () => {
  it("preserves ids, order, and float32 values", () => {
    const records = [
      { id: "a", vector: vec(1, 2, 3) },
      { id: "img_0042", vector: vec(-0.5, 0.25, 1e-7) },
      { id: "utf8-éλ", vector: vec(0, 0, 0) },
    ];
    const decoded = decodeEmb1(encodeEmb1(records, 3));
    expect(decoded.dim).toBe(3);
    expect(decoded.records.map((r) => r.id)).toEqual(
      records.map((r) => r.id),
    );
    for (let i = 0; i < records.length; i++) {
      expect([...decoded.records[i].vector]).toEqual([...records[i].vector]);
    }
  });

  it("supports an empty file with n=0", () => {
    const buf = encodeEmb1([], 128);
    expect(buf.length).toBe(16);
    const decoded = decodeEmb1(buf);
    expect(decoded.dim).toBe(128);
    expect(decoded.records).toEqual([]);
  });
});

describe("header layout", () => {
  it("is magic, version, n, dim as little-endian u32", () => {
    const buf = encodeEmb1([{ id: "x", vector: vec(1.5) }], 1);
    expect(buf.subarray(0, 4).toString("ascii")).toBe("EMB1");
    expect(buf.readUInt32LE(4)).toBe(1);
    expect(buf.readUInt32LE(8)).toBe(1);
    expect(buf.readUInt32LE(12)).toBe(1);
    expect(buf.readUInt16LE(16)).toBe(1); // id length
    expect(buf.readFloatLE(19)).toBe(1.5);
    expect(buf.length).toBe(16 + 2 + 1 + 4);
  });
});

describe("validation", () => {
  it("rejects duplicate ids", () => {
    expect(() =>
      encodeEmb1(
        [
          { id: "a", vector: vec(1) },
          { id: "a", vector: vec(2) },
        ],
        1,
      ),
    ).toThrow(Emb1Error);
  });

  it("rejects dim mismatch and non-finite values", () => {
    expect(() => encodeEmb1([{ id: "a", vector: vec(1, 2) }], 3)).toThrow(
      Emb1Error,
    );
    expect(() => encodeEmb1([{ id: "a", vector: vec(NaN) }], 1)).toThrow(
      Emb1Error,
    );
  });

  it("rejects bad magic, truncation, and trailing bytes", () => {
    const good = encodeEmb1([{ id: "a", vector: vec(1, 2) }], 2);
    const badMagic = Buffer.from(good);
    badMagic.write("XXXX", 0, "ascii");
    expect(() => decodeEmb1(badMagic)).toThrow(/magic/);
    expect(() => decodeEmb1(good.subarray(0, good.length - 1))).toThrow(
      /truncated/,
    );
    expect(() => decodeEmb1(Buffer.concat([good, Buffer.from([0])]))).toThrow(
      /trailing/,
    );
  });
});
