"""Embedding matrices, the EMB1 binary format, and provider invocation.

A model is represented only by the embeddings it produces. Providers are
external programs: file mode runs the provider once over a stimulus manifest
and reads back an EMB1 file; subprocess mode streams PNG bytes over stdio
with length-prefixed frames.
"""
from __future__ import annotations

import os
import select
import struct
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import rng_for

MAGIC = b"EMB1"
VERSION = 1


class EmbeddingError(ValueError):
    """Malformed EMB1 data or invalid embedding contents."""


class ProviderError(RuntimeError):
    """Provider process failure; carries rows completed before the failure."""

    def __init__(self, message: str, completed: "EmbeddingMatrix | None" = None):
        super().__init__(message)
        self.completed = completed


@dataclass
class EmbeddingMatrix:
    ids: list[str]
    vectors: np.ndarray  # n x dim float32

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise EmbeddingError("vectors must be 2-D")
        if len(self.ids) != self.vectors.shape[0]:
            raise EmbeddingError("ids/vectors length mismatch")
        if len(set(self.ids)) != len(self.ids):
            raise EmbeddingError("duplicate image ids")
        if not np.all(np.isfinite(self.vectors)):
            raise EmbeddingError("non-finite embedding values")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)

    def select(self, ids: list[str]) -> "EmbeddingMatrix":
        index = {i: k for k, i in enumerate(self.ids)}
        missing = [i for i in ids if i not in index]
        if missing:
            raise EmbeddingError(f"missing embeddings for {missing[:5]}"
                                 + ("..." if len(missing) > 5 else ""))
        rows = [index[i] for i in ids]
        return EmbeddingMatrix(list(ids), self.vectors[rows])


def write_embeddings(m: EmbeddingMatrix, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, len(m), m.dim))
        for i, image_id in enumerate(m.ids):
            raw = image_id.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(m.vectors[i].tobytes())


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise EmbeddingError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 16:
        raise EmbeddingError(f"{path}: truncated header")
    version, n, dim = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise EmbeddingError(f"{path}: unsupported version {version}")
    if dim == 0 and n > 0:
        raise EmbeddingError(f"{path}: zero dim")
    off = 16
    ids = []
    vecs = np.empty((n, dim), dtype=np.float32)
    for i in range(n):
        if off + 2 > len(data):
            raise EmbeddingError(f"{path}: truncated at record {i}")
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        end = off + id_len + 4 * dim
        if end > len(data):
            raise EmbeddingError(f"{path}: truncated at record {i}")
        ids.append(data[off:off + id_len].decode("utf-8"))
        vecs[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=off + id_len)
        off += id_len + 4 * dim
    if off != len(data):
        raise EmbeddingError(f"{path}: {len(data) - off} trailing bytes")
    return EmbeddingMatrix(ids, vecs)


@dataclass
class ProviderConfig:
    mode: str = "file"  # file | subprocess
    command: list[str] = field(default_factory=list)
    batch_size: int = 16
    timeout: float = 300.0

    def __post_init__(self):
        if self.mode not in ("file", "subprocess"):
            raise ValueError(f"unknown provider mode {self.mode!r}")
        if not self.command:
            raise ValueError("provider command must be non-empty")


def run_provider(cfg: ProviderConfig, stimuli, stimuli_root: str | Path = ".",
                 scratch_dir: str | Path | None = None) -> EmbeddingMatrix:
    """Embed every successful stimulus row through an external provider.

    Output row order equals manifest order. File-mode providers are invoked as
    `command <stimulus_manifest_csv> <output_emb1>`.
    """
    rows = stimuli.ok_rows()
    if not rows:
        raise ProviderError("no successful stimulus rows to embed")
    if cfg.mode == "file":
        return _run_file_provider(cfg, stimuli, rows, scratch_dir)
    return _run_subprocess_provider(cfg, rows, Path(stimuli_root))


def _run_file_provider(cfg, stimuli, rows, scratch_dir) -> EmbeddingMatrix:
    scratch = Path(scratch_dir) if scratch_dir else Path(".")
    scratch.mkdir(parents=True, exist_ok=True)
    manifest_path = scratch / "provider_stimuli.csv"
    out_path = scratch / "provider_out.emb1"
    stimuli.write(manifest_path)
    try:
        proc = subprocess.run(
            [*cfg.command, str(manifest_path), str(out_path)],
            capture_output=True, text=True, timeout=cfg.timeout)
    except subprocess.TimeoutExpired as e:
        raise ProviderError(f"provider timed out after {cfg.timeout}s") from e
    if proc.returncode != 0:
        raise ProviderError(
            f"provider exited {proc.returncode}: {proc.stderr.strip()[:500]}")
    result = read_embeddings(out_path)
    wanted = [r["image_id"] for r in rows]
    return result.select(wanted)


def _read_exact(fd: int, n: int, deadline: float) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        budget = deadline - time.monotonic()
        if budget <= 0:
            raise ProviderError("provider timed out mid-frame")
        ready, _, _ = select.select([fd], [], [], budget)
        if not ready:
            raise ProviderError("provider timed out mid-frame")
        chunk = os.read(fd, remaining)
        if not chunk:
            raise ProviderError("provider closed stream mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _run_subprocess_provider(cfg, rows, stimuli_root: Path) -> EmbeddingMatrix:
    proc = subprocess.Popen(cfg.command, stdin=subprocess.PIPE,
                            stdout=subprocess.PIPE)
    ids: list[str] = []
    vecs: list[np.ndarray] = []
    dim: int | None = None

    def completed() -> EmbeddingMatrix | None:
        if not ids:
            return None
        return EmbeddingMatrix(ids, np.stack(vecs))

    try:
        for row in rows:
            png = (stimuli_root / row["path"]).read_bytes()
            raw_id = row["image_id"].encode("utf-8")
            payload = struct.pack("<H", len(raw_id)) + raw_id + \
                struct.pack("<I", len(png)) + png
            proc.stdin.write(struct.pack("<I", len(payload)) + payload)
            proc.stdin.flush()

            deadline = time.monotonic() + cfg.timeout
            fd = proc.stdout.fileno()
            try:
                (plen,) = struct.unpack("<I", _read_exact(fd, 4, deadline))
                reply = _read_exact(fd, plen, deadline)
            except ProviderError as e:
                raise ProviderError(str(e), completed()) from e
            (rid_len,) = struct.unpack_from("<H", reply, 0)
            rid = reply[2:2 + rid_len].decode("utf-8")
            (rdim,) = struct.unpack_from("<I", reply, 2 + rid_len)
            vec = np.frombuffer(reply, dtype="<f4", count=rdim,
                                offset=6 + rid_len)
            if rid != row["image_id"]:
                raise ProviderError(
                    f"out-of-order reply: expected {row['image_id']!r}, "
                    f"got {rid!r}", completed())
            if dim is None:
                dim = rdim
            elif rdim != dim:
                raise ProviderError(
                    f"dim drift: {dim} -> {rdim} at {rid!r}", completed())
            ids.append(rid)
            vecs.append(np.array(vec, dtype=np.float32))
        proc.stdin.write(struct.pack("<I", 0))
        proc.stdin.flush()
        proc.stdin.close()
        rc = proc.wait(timeout=cfg.timeout)
        if rc != 0:
            raise ProviderError(f"provider exited {rc}", completed())
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()
    return EmbeddingMatrix(ids, np.stack(vecs))


def synthetic_embeddings(manifest, noise_scale: float, dim: int = 32,
                         seed: int = 0) -> EmbeddingMatrix:
    """Deterministic test provider: unit anchor per identity plus seeded noise.

    Each identity gets a fixed unit anchor vector; each image gets the anchor
    plus isotropic Gaussian noise of the given standard deviation,
    renormalized to unit length. The noise stream is keyed per image_id so
    results are independent of record order.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    anchors: dict[int, np.ndarray] = {}
    ids, vecs = [], []
    for rec in manifest.records:
        if rec.person_id not in anchors:
            a = rng_for(seed, "anchor", rec.person_id).standard_normal(dim)
            anchors[rec.person_id] = a / np.linalg.norm(a)
        v = anchors[rec.person_id]
        if noise_scale > 0:
            v = v + noise_scale * rng_for(seed, "noise", rec.image_id).standard_normal(dim)
            v = v / np.linalg.norm(v)
        ids.append(rec.image_id)
        vecs.append(v.astype(np.float32))
    return EmbeddingMatrix(ids, np.stack(vecs) if vecs else np.empty((0, dim), np.float32))
