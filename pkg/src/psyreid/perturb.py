"""Parameterized stimulus perturbations and sweep materialization.

Images are HxWx3 uint8 RGB numpy arrays. Every operator preserves the input
dimensions and is a pure function of (pixels, kind, level, seed); the
randomized kinds (occlude_voc, rain, snow) draw from a generator derived from
the seed alone. The rendering constants for rain/snow are artifact-defined
defaults, frozen here so sweeps are reproducible.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image as PILImage

from .seeding import fnv1a, mix64, rng_for

log = logging.getLogger(__name__)

KINDS = (
    "gaussian_blur", "occlude_bottom", "occlude_left", "occlude_repeat",
    "occlude_voc", "partial_detection", "jpeg", "translate", "scale",
    "rain", "snow", "identity",
)

# Level at which each kind is the identity transform (None: no such level).
IDENTITY_ANCHORS = {
    "gaussian_blur": 0.0,
    "occlude_bottom": 0.0,
    "occlude_left": 0.0,
    "occlude_repeat": 0.0,
    "occlude_voc": 0.0,
    "partial_detection": 0.0,
    "jpeg": 100.0,
    "translate": 0.0,
    "scale": 1.0,
    "rain": math.inf,   # streak count -> 0 as inverse density grows
    "snow": 0.0,
    "identity": 0.0,
}

RAIN_STREAKS_PER_PIXEL = 1.0 / 250.0
RAIN_LENGTH_FRAC = 0.15
RAIN_ANGLE_DEG = -10.0
RAIN_COLOR = (200, 200, 200)
RAIN_ALPHA = 0.7
SNOW_PIXELS_PER_FLAKE = 50.0
SNOW_ALPHA = 0.9


class PerturbationError(ValueError):
    """Level outside the kind's domain or bad operator configuration."""


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PerturbationError(f"unknown kind {self.kind!r}")
        _check_level(self.kind, self.level)


@dataclass(frozen=True)
class StimulusSweep:
    kind: str
    levels: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PerturbationError(f"unknown kind {self.kind!r}")
        if not self.levels:
            raise PerturbationError("empty level list")
        diffs = np.diff(self.levels)
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise PerturbationError("levels must be strictly monotone")
        anchor = IDENTITY_ANCHORS[self.kind]
        if math.isfinite(anchor) and sum(
                1 for lv in self.levels if lv == anchor) != 1:
            raise PerturbationError(
                f"sweep must contain the identity anchor {anchor} exactly once")
        for lv in self.levels:
            _check_level(self.kind, lv)


def _check_level(kind: str, level: float) -> None:
    ok = {
        "gaussian_blur": lambda: level >= 0,
        "occlude_bottom": lambda: 0 <= level <= 1,
        "occlude_left": lambda: 0 <= level <= 1,
        "occlude_repeat": lambda: 0 <= level <= 1,
        "occlude_voc": lambda: 0 <= level <= 1,
        "partial_detection": lambda: 0 <= level < 1,
        "jpeg": lambda: 1 <= level <= 100 and level == int(level),
        "translate": lambda: -1 <= level <= 1,
        "scale": lambda: level > 0,
        "rain": lambda: level > 0,
        "snow": lambda: 0 <= level <= 1,
        "identity": lambda: True,
    }[kind]()
    if not ok:
        raise PerturbationError(f"{kind}: level {level} outside domain")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise PerturbationError(f"expected HxWx3 uint8 image, got "
                                f"{img.shape} {img.dtype}")
    return img


@dataclass
class OccluderAsset:
    asset_id: str
    rgba: np.ndarray  # HxWx4 uint8
    mask_area_px: int


@dataclass
class OccluderLibrary:
    """Directory of RGBA cutouts indexed by assets.csv."""
    assets: list[OccluderAsset] = field(default_factory=list)

    @classmethod
    def load(cls, directory: str | Path) -> "OccluderLibrary":
        directory = Path(directory)
        index = directory / "assets.csv"
        if not index.exists():
            raise PerturbationError(f"no assets.csv in {directory}")
        assets = []
        with open(index, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                rgba = np.array(PILImage.open(directory / row["path"]).convert("RGBA"))
                assets.append(OccluderAsset(row["asset_id"], rgba,
                                            int(row["mask_area_px"])))
        if not assets:
            raise PerturbationError(f"empty occluder library in {directory}")
        return cls(assets)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma == 0:
        return img.copy()
    radius = math.ceil(3 * sigma)
    ksize = 2 * radius + 1
    return cv2.GaussianBlur(img, (ksize, ksize), sigmaX=sigma, sigmaY=sigma,
                            borderType=cv2.BORDER_REPLICATE)


def occlude_bottom(img: np.ndarray, p: float) -> np.ndarray:
    out = img.copy()
    rows = min(_round_half_up(p * img.shape[0]), img.shape[0])
    if rows:
        out[img.shape[0] - rows:, :, :] = 0
    return out


def occlude_left(img: np.ndarray, p: float) -> np.ndarray:
    out = img.copy()
    cols = min(_round_half_up(p * img.shape[1]), img.shape[1])
    if cols:
        out[:, :cols, :] = 0
    return out


def occlude_repeat(img: np.ndarray, p: float) -> np.ndarray:
    out = img.copy()
    h = img.shape[0]
    # keep at least one visible row so the repeated row is well-defined
    rows = min(_round_half_up(p * h), h - 1)
    if rows:
        out[h - rows:, :, :] = img[h - rows - 1, :, :]
    return out


def occlude_voc(img: np.ndarray, p: float, seed: int,
                library: OccluderLibrary | None,
                bbox: tuple[float, float, float, float] | None = None) -> np.ndarray:
    if p == 0:
        return img.copy()
    if library is None or not library.assets:
        raise PerturbationError("occlude_voc requires a non-empty occluder library")
    h, w = img.shape[:2]
    if bbox is not None:
        x1, y1, x2, y2 = bbox
        area = (min(x2, w) - max(x1, 0)) * (min(y2, h) - max(y1, 0))
    else:
        area = w * h
    rng = rng_for(seed, "voc")
    asset = library.assets[rng.integers(len(library.assets))]
    target_mask_px = p * area
    factor = math.sqrt(target_mask_px / max(asset.mask_area_px, 1))
    ah, aw = asset.rgba.shape[:2]
    new_w = max(1, min(w, _round_half_up(aw * factor)))
    new_h = max(1, min(h, _round_half_up(ah * factor)))
    cutout = cv2.resize(asset.rgba, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    x0 = int(rng.integers(0, w - new_w + 1))
    y0 = int(rng.integers(0, h - new_h + 1))
    out = img.astype(np.float64)
    alpha = cutout[:, :, 3:4].astype(np.float64) / 255.0
    region = out[y0:y0 + new_h, x0:x0 + new_w, :]
    out[y0:y0 + new_h, x0:x0 + new_w, :] = (
        alpha * cutout[:, :, :3].astype(np.float64) + (1 - alpha) * region)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def partial_detection(img: np.ndarray, p: float, side: str = "bottom") -> np.ndarray:
    h, w = img.shape[:2]
    rows = min(_round_half_up(p * h), h - 1)
    if rows == 0:
        return img.copy()
    if side == "bottom":
        cropped = img[:h - rows, :, :]
    elif side == "top":
        cropped = img[rows:, :, :]
    else:
        raise PerturbationError(f"unknown crop side {side!r}")
    return cv2.resize(cropped, (w, h), interpolation=cv2.INTER_LINEAR)


def jpeg_roundtrip(img: np.ndarray, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    # subsampling=2 selects 4:2:0 chroma subsampling; baseline encoder
    PILImage.fromarray(img).save(buf, format="JPEG", quality=int(quality),
                                 subsampling=2)
    buf.seek(0)
    return np.array(PILImage.open(buf).convert("RGB"))


def translate(img: np.ndarray, d: float) -> np.ndarray:
    h, w = img.shape[:2]
    shift = _round_half_up(d * w) if d >= 0 else -_round_half_up(-d * w)
    out = np.zeros_like(img)
    if shift >= 0:
        if shift < w:
            out[:, shift:, :] = img[:, :w - shift, :]
    else:
        if -shift < w:
            out[:, :w + shift, :] = img[:, -shift:, :]
    return out


def scale(img: np.ndarray, s: float) -> np.ndarray:
    if s == 1:
        return img.copy()
    h, w = img.shape[:2]
    new_w = max(1, _round_half_up(w * s))
    new_h = max(1, _round_half_up(h * s))
    resized = cv2.resize(img, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    out = np.zeros_like(img)
    if s < 1:
        y0 = (h - new_h) // 2
        x0 = (w - new_w) // 2
        out[y0:y0 + new_h, x0:x0 + new_w, :] = resized
    else:
        y0 = (new_h - h) // 2
        x0 = (new_w - w) // 2
        out[:, :, :] = resized[y0:y0 + h, x0:x0 + w, :]
    return out


def _overlay_alpha(img: np.ndarray, overlay: np.ndarray, mask: np.ndarray,
                   alpha: float) -> np.ndarray:
    out = img.astype(np.float64)
    m = mask.astype(bool)
    out[m] = alpha * overlay[m] + (1 - alpha) * out[m]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def rain(img: np.ndarray, inverse_density: float, seed: int) -> np.ndarray:
    h, w = img.shape[:2]
    rng = rng_for(seed, "rain")
    count = rng.poisson(w * h * RAIN_STREAKS_PER_PIXEL / inverse_density)
    if count == 0:
        return img.copy()
    layer = np.zeros((h, w, 3), np.uint8)
    mask = np.zeros((h, w), np.uint8)
    length = max(1, _round_half_up(RAIN_LENGTH_FRAC * h))
    angle = math.radians(RAIN_ANGLE_DEG)
    dx = _round_half_up(length * math.sin(angle))
    dy = _round_half_up(length * math.cos(angle))
    for _ in range(count):
        x = int(rng.integers(0, w))
        y = int(rng.integers(0, h))
        cv2.line(layer, (x, y), (x + dx, y + dy), RAIN_COLOR, thickness=2)
        cv2.line(mask, (x, y), (x + dx, y + dy), 1, thickness=2)
    return _overlay_alpha(img, layer.astype(np.float64), mask, RAIN_ALPHA)


def snow(img: np.ndarray, density: float, seed: int) -> np.ndarray:
    h, w = img.shape[:2]
    rng = rng_for(seed, "snow")
    count = rng.poisson(density * w * h / SNOW_PIXELS_PER_FLAKE)
    if count == 0:
        return img.copy()
    layer = np.full((h, w, 3), 255, np.uint8)
    mask = np.zeros((h, w), np.uint8)
    for _ in range(count):
        x = int(rng.integers(0, w))
        y = int(rng.integers(0, h))
        radius = int(rng.integers(1, 3))
        cv2.circle(mask, (x, y), radius, 1, thickness=-1)
    return _overlay_alpha(img, layer.astype(np.float64), mask, SNOW_ALPHA)


def apply_perturbation(
    img: np.ndarray,
    spec: PerturbationSpec,
    occluders: OccluderLibrary | None = None,
    bbox: tuple[float, float, float, float] | None = None,
) -> np.ndarray:
    """Apply one perturbation; output dimensions always equal the input's."""
    img = _check_image(img)
    k, lv = spec.kind, spec.level
    if k == "identity":
        out = img.copy()
    elif k == "gaussian_blur":
        out = gaussian_blur(img, lv)
    elif k == "occlude_bottom":
        out = occlude_bottom(img, lv)
    elif k == "occlude_left":
        out = occlude_left(img, lv)
    elif k == "occlude_repeat":
        out = occlude_repeat(img, lv)
    elif k == "occlude_voc":
        out = occlude_voc(img, lv, spec.seed, occluders, bbox)
    elif k == "partial_detection":
        out = partial_detection(img, lv)
    elif k == "jpeg":
        out = jpeg_roundtrip(img, int(lv))
    elif k == "translate":
        out = translate(img, lv)
    elif k == "scale":
        out = scale(img, lv)
    elif k == "rain":
        out = rain(img, lv, spec.seed)
    elif k == "snow":
        out = snow(img, lv, spec.seed)
    else:  # pragma: no cover - guarded by PerturbationSpec
        raise PerturbationError(k)
    assert out.shape == img.shape
    return out


STIMULUS_COLUMNS = ["image_id", "kind", "level", "level_index", "path", "status"]


@dataclass
class StimulusManifest:
    rows: list[dict]  # keys: STIMULUS_COLUMNS

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=STIMULUS_COLUMNS)
            w.writeheader()
            w.writerows(self.rows)

    @classmethod
    def read(cls, path: str | Path) -> "StimulusManifest":
        with open(path, newline="", encoding="utf-8") as f:
            return cls(rows=list(csv.DictReader(f)))

    def ok_rows(self) -> list[dict]:
        return [r for r in self.rows if r["status"] == "ok"]


def per_image_seed(sweep_seed: int, image_id: str, level_index: int) -> int:
    return mix64(sweep_seed, fnv1a(image_id), level_index)


def materialize_sweep(
    manifest,
    sweep: StimulusSweep,
    out_dir: str | Path,
    images_root: str | Path = ".",
    occluders: OccluderLibrary | None = None,
    threads: int = 1,
) -> StimulusManifest:
    """Write perturbed PNGs for every (query record, level) pair.

    Output layout: out_dir/<kind>/<level_index>/<image_id>.png. The per-image
    seed depends only on (sweep seed, image_id, level index), so output bytes
    are independent of scheduling and thread count.
    """
    out_dir = Path(out_dir)
    images_root = Path(images_root)
    jobs = [(rec, li, lv) for rec in manifest.records
            for li, lv in enumerate(sweep.levels)]
    for li in range(len(sweep.levels)):
        (out_dir / sweep.kind / str(li)).mkdir(parents=True, exist_ok=True)

    def run_one(job):
        rec, li, lv = job
        rel = Path(sweep.kind) / str(li) / f"{rec.image_id}.png"
        try:
            src = np.array(PILImage.open(images_root / rec.path).convert("RGB"))
            spec = PerturbationSpec(sweep.kind, lv,
                                    per_image_seed(sweep.seed, rec.image_id, li))
            out = apply_perturbation(src, spec, occluders=occluders, bbox=rec.bbox)
            PILImage.fromarray(out).save(out_dir / rel, format="PNG")
            status = "ok"
        except (OSError, PerturbationError) as e:
            log.warning("stimulus failed for %s level %s: %s", rec.image_id, lv, e)
            status = "failed"
        return {"image_id": rec.image_id, "kind": sweep.kind, "level": repr(lv),
                "level_index": str(li), "path": str(rel), "status": status}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_one, jobs))
    else:
        rows = [run_one(j) for j in jobs]
    if rows and not any(r["status"] == "ok" for r in rows):
        raise PerturbationError("all stimulus renders failed")
    return StimulusManifest(rows=rows)
