#!/usr/bin/env python3
"""Stdio streaming provider fixture.

Reads length-prefixed frames [u32 len][u16 id_len, id, u32 png_len, png],
replies [u32 len][u16 id_len, id, u32 dim, dim x f32]. Embeds each image as
a constant vector derived from the PNG byte length so the harness can check
per-image values. Modes via argv[1]:
  ok       - normal operation (default)
  drift    - switch dim after 2 replies
  crash    - exit mid-stream after 2 replies
"""
import struct
import sys


def read_exact(n):
    buf = b""
    while len(buf) < n:
        chunk = sys.stdin.buffer.read(n - len(buf))
        if not chunk:
            sys.exit(1)
        buf += chunk
    return buf


def main():
    mode = sys.argv[1] if len(sys.argv) > 1 else "ok"
    count = 0
    while True:
        (plen,) = struct.unpack("<I", read_exact(4))
        if plen == 0:
            return 0
        payload = read_exact(plen)
        (id_len,) = struct.unpack_from("<H", payload, 0)
        image_id = payload[2:2 + id_len]
        (png_len,) = struct.unpack_from("<I", payload, 2 + id_len)
        count += 1
        if mode == "crash" and count > 2:
            return 9
        dim = 3 if mode == "drift" and count > 2 else 4
        vec = struct.pack(f"<{dim}f", *([float(png_len % 97)] * dim))
        reply = struct.pack("<H", id_len) + image_id + \
            struct.pack("<I", dim) + vec
        sys.stdout.buffer.write(struct.pack("<I", len(reply)) + reply)
        sys.stdout.buffer.flush()


if __name__ == "__main__":
    sys.exit(main())
