/**
 * Streaming mode: length-prefixed request/reply frames over stdio.
 *
 * Request:  u32 payloadLen | u16 idLen | id UTF-8 | u32 pngLen | PNG bytes
 * Reply:    u32 payloadLen | u16 idLen | id UTF-8 | u32 dim | dim * f32
 * All integers little-endian. A zero-length request frame terminates the
 * stream. Replies are written in request order and flushed per frame; any
 * malformed or truncated frame is a fatal protocol error.
 */

import { decodePng } from "./image";
import { EmbedModel } from "./models";

export class StreamError extends Error {}

function encodeReply(id: string, vector: Float32Array): Buffer {
  const raw = Buffer.from(id, "utf-8");
  const payload = Buffer.alloc(2 + raw.length + 4 + 4 * vector.length);
  payload.writeUInt16LE(raw.length, 0);
  raw.copy(payload, 2);
  payload.writeUInt32LE(vector.length, 2 + raw.length);
  for (let i = 0; i < vector.length; i++) {
    payload.writeFloatLE(vector[i], 2 + raw.length + 4 + 4 * i);
  }
  const frame = Buffer.alloc(4);
  frame.writeUInt32LE(payload.length, 0);
  return Buffer.concat([frame, payload]);
}

function parseRequest(payload: Buffer): { id: string; png: Buffer } {
  if (payload.length < 2) {
    throw new StreamError("payload too short for id length");
  }
  const idLen = payload.readUInt16LE(0);
  if (payload.length < 2 + idLen + 4) {
    throw new StreamError("payload too short for id and PNG length");
  }
  const id = payload.subarray(2, 2 + idLen).toString("utf-8");
  const pngLen = payload.readUInt32LE(2 + idLen);
  if (payload.length !== 2 + idLen + 4 + pngLen) {
    throw new StreamError(`payload length mismatch for ${JSON.stringify(id)}`);
  }
  return { id, png: payload.subarray(2 + idLen + 4) };
}

function write(output: NodeJS.WritableStream, data: Buffer): Promise<void> {
  return new Promise((res, rej) => {
    if (output.write(data, (err) => (err ? rej(err) : undefined))) {
      res();
    } else {
      output.once("drain", res);
    }
  });
}

/** Serve frames until the zero-length terminator; resolves on clean shutdown. */
export async function provideStream(
  model: EmbedModel,
  input: NodeJS.ReadableStream,
  output: NodeJS.WritableStream,
): Promise<number> {
  let pending: Buffer = Buffer.alloc(0);
  let served = 0;
  for await (const chunk of input) {
    pending = pending.length === 0
      ? (chunk as Buffer)
      : Buffer.concat([pending, chunk as Buffer]);
    while (pending.length >= 4) {
      const payloadLen = pending.readUInt32LE(0);
      if (payloadLen === 0) {
        if (pending.length > 4) {
          throw new StreamError(
            `${pending.length - 4} bytes after the terminator frame`,
          );
        }
        return served;
      }
      if (pending.length < 4 + payloadLen) {
        break;
      }
      const { id, png } = parseRequest(pending.subarray(4, 4 + payloadLen));
      pending = pending.subarray(4 + payloadLen);
      const vector = model.embed(decodePng(png));
      await write(output, encodeReply(id, vector));
      served++;
    }
  }
  throw new StreamError(
    pending.length > 0
      ? `input ended mid-frame with ${pending.length} buffered bytes`
      : "input ended without a terminator frame",
  );
}
