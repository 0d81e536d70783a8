/**
 * EMB1 binary embedding container.
 *
 * Layout (little-endian, no padding):
 *   magic "EMB1" | u32 version=1 | u32 n | u32 dim
 *   then n records of: u16 idLen | idLen bytes UTF-8 | dim * f32
 */

export const MAGIC = Buffer.from("EMB1", "ascii");
export const VERSION = 1;

export interface EmbeddingRecord {
  id: string;
  vector: Float32Array;
}

export class Emb1Error extends Error {}

export function encodeEmb1(records: EmbeddingRecord[], dim: number): Buffer {
  const seen = new Set<string>();
  const parts: Buffer[] = [];
  const header = Buffer.alloc(16);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(records.length, 8);
  header.writeUInt32LE(dim, 12);
  parts.push(header);
  for (const rec of records) {
    if (seen.has(rec.id)) {
      throw new Emb1Error(`duplicate id ${JSON.stringify(rec.id)}`);
    }
    seen.add(rec.id);
    if (rec.vector.length !== dim) {
      throw new Emb1Error(
        `id ${JSON.stringify(rec.id)}: dim ${rec.vector.length} != ${dim}`,
      );
    }
    for (const v of rec.vector) {
      if (!Number.isFinite(v)) {
        throw new Emb1Error(`id ${JSON.stringify(rec.id)}: non-finite value`);
      }
    }
    const raw = Buffer.from(rec.id, "utf-8");
    if (raw.length > 0xffff) {
      throw new Emb1Error(`id ${JSON.stringify(rec.id.slice(0, 32))}: too long`);
    }
    const head = Buffer.alloc(2);
    head.writeUInt16LE(raw.length, 0);
    const vec = Buffer.alloc(4 * dim);
    for (let i = 0; i < dim; i++) {
      vec.writeFloatLE(rec.vector[i], 4 * i);
    }
    parts.push(head, raw, vec);
  }
  return Buffer.concat(parts);
}

export function decodeEmb1(data: Buffer): { dim: number; records: EmbeddingRecord[] } {
  if (data.length < 16 || !data.subarray(0, 4).equals(MAGIC)) {
    throw new Emb1Error("bad magic or truncated header");
  }
  const version = data.readUInt32LE(4);
  if (version !== VERSION) {
    throw new Emb1Error(`unsupported version ${version}`);
  }
  const n = data.readUInt32LE(8);
  const dim = data.readUInt32LE(12);
  if (dim === 0 && n > 0) {
    throw new Emb1Error("zero dim");
  }
  let off = 16;
  const records: EmbeddingRecord[] = [];
  for (let i = 0; i < n; i++) {
    if (off + 2 > data.length) {
      throw new Emb1Error(`truncated at record ${i}`);
    }
    const idLen = data.readUInt16LE(off);
    off += 2;
    if (off + idLen + 4 * dim > data.length) {
      throw new Emb1Error(`truncated at record ${i}`);
    }
    const id = data.subarray(off, off + idLen).toString("utf-8");
    off += idLen;
    const vector = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      vector[j] = data.readFloatLE(off + 4 * j);
    }
    off += 4 * dim;
    records.push({ id, vector });
  }
  if (off !== data.length) {
    throw new Emb1Error(`${data.length - off} trailing bytes`);
  }
  return { dim, records };
}
