from __future__ import annotations

import numpy as np
import pytest
from PIL import Image as PILImage

from psyreid.dataset import Manifest, SampleRecord


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def image(rng):
    return rng.integers(0, 256, (64, 32, 3), dtype=np.uint8)


def make_manifest(n_ids, images_per_id, split="query", prefix="q", cam=0):
    records = []
    for pid in range(n_ids):
        for j in range(images_per_id):
            iid = f"{prefix}{pid:04d}_{j}"
            records.append(SampleRecord(
                image_id=iid, path=f"{iid}.png", person_id=pid, camera_id=cam))
    return Manifest(split=split, records=records)


def write_images(manifest, root, size=(32, 64), seed=0):
    """Smooth synthetic images (gradients + low-frequency texture)."""
    rng = np.random.default_rng(seed)
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w]
    for rec in manifest.records:
        phase = rng.uniform(0, 2 * np.pi, 3)
        freq = rng.uniform(0.3, 1.0, 3)
        arr = np.stack([
            127.5 + 90 * np.sin(freq[c] * (xx / w + yy / h) * np.pi + phase[c])
            for c in range(3)], axis=-1)
        arr += rng.normal(0, 1.5, arr.shape)
        PILImage.fromarray(np.clip(arr, 0, 255).astype(np.uint8)).save(root / rec.path)


@pytest.fixture
def corpus(rng, tmp_path):
    """20 random small images on disk; returns (manifest, root)."""
    manifest = make_manifest(10, 2)
    write_images(manifest, tmp_path, seed=7)
    return manifest, tmp_path
