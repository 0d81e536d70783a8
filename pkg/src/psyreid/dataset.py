"""Dataset manifests, ReID naming conventions, and track-based split building.

A manifest is an ordered collection of labeled image records (identity,
camera, track, frame time). Tracks from a validation partition are split
temporally: the head of each track becomes gallery, the tail becomes query,
and the middle is omitted to keep query and gallery temporally separated.
"""
from __future__ import annotations

import csv
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = [
    "image_id", "path", "person_id", "camera_id", "track_id",
    "frame_time", "visibility", "x1", "y1", "x2", "y2",
]
TRACK_COLUMNS = MANIFEST_COLUMNS + ["partition"]

# Market-1501 style: 0002_c1s1_000451_03.jpg -> person 2, camera 1.
# person_id -1 marks distractor/junk images and is preserved as-is.
_MARKET_RE = re.compile(
    r"^(?P<pid>-?\d+)_c(?P<cam>\d+)s(?P<seq>\d+)_(?P<frame>\d+)_(?P<idx>\d+)"
    r"\.(?:jpg|jpeg|png)$",
    re.IGNORECASE,
)


class ManifestError(ValueError):
    """Malformed or inconsistent manifest data."""


@dataclass(frozen=True)
class SampleRecord:
    image_id: str
    path: str
    person_id: int
    camera_id: int = 0
    track_id: str | None = None
    frame_time: float | None = None
    visibility: int | None = None
    bbox: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if not self.image_id:
            raise ManifestError("empty image_id")
        if self.person_id < -1:
            raise ManifestError(f"{self.image_id}: person_id {self.person_id} < -1")
        if self.camera_id < 0:
            raise ManifestError(f"{self.image_id}: negative camera_id")
        if self.visibility is not None and self.visibility not in (1, 2, 3, 4):
            raise ManifestError(
                f"{self.image_id}: visibility {self.visibility} not in 1..4")
        if self.bbox is not None:
            x1, y1, x2, y2 = self.bbox
            if min(x1, y1) < 0 or x1 >= x2 or y1 >= y2:
                raise ManifestError(f"{self.image_id}: bad bbox {self.bbox}")


@dataclass
class Manifest:
    split: str = "unsplit"
    records: list[SampleRecord] = field(default_factory=list)
    source: str = ""

    def __post_init__(self):
        if self.split not in ("train", "query", "gallery", "unsplit"):
            raise ManifestError(f"unknown split {self.split!r}")
        seen = set()
        for r in self.records:
            if r.image_id in seen:
                raise ManifestError(f"duplicate image_id {r.image_id!r}")
            seen.add(r.image_id)

    def __len__(self):
        return len(self.records)

    def image_ids(self) -> set[str]:
        return {r.image_id for r in self.records}

    def person_ids(self) -> set[int]:
        return {r.person_id for r in self.records}


@dataclass
class TrackRecord:
    track_id: str
    person_id: int
    keyframes: list[SampleRecord]
    partition: str = "eval"

    def __post_init__(self):
        times = [k.frame_time for k in self.keyframes]
        if any(t is None for t in times):
            raise ManifestError(f"track {self.track_id}: keyframe without frame_time")
        if any(b >= a for a, b in zip(times[1:], times)):
            raise ManifestError(f"track {self.track_id}: keyframes not strictly "
                                "increasing in frame_time")
        for k in self.keyframes:
            if k.person_id != self.person_id or k.track_id != self.track_id:
                raise ManifestError(
                    f"track {self.track_id}: keyframe {k.image_id} has mismatched "
                    "person_id/track_id")
        if self.partition not in ("train", "eval"):
            raise ManifestError(f"track {self.track_id}: bad partition {self.partition!r}")


@dataclass
class SplitConfig:
    gallery_frac: float = 0.6
    query_frac: float = 0.2
    min_keyframes: int = 5
    min_visibility: int = 3

    def __post_init__(self):
        if self.gallery_frac <= 0 or self.query_frac <= 0:
            raise ValueError("fractions must be positive")
        if self.gallery_frac + self.query_frac > 1 + 1e-12:
            raise ValueError("gallery_frac + query_frac must be <= 1")


def _parse_optional_float(s: str) -> float | None:
    return float(s) if s.strip() else None


def _parse_optional_int(s: str) -> int | None:
    return int(s) if s.strip() else None


def _record_from_row(row: dict, where: str) -> SampleRecord:
    try:
        coords = [row.get(c, "") for c in ("x1", "y1", "x2", "y2")]
        if any(c.strip() for c in coords):
            bbox = tuple(float(c) for c in coords)
        else:
            bbox = None
        return SampleRecord(
            image_id=row["image_id"],
            path=row["path"],
            person_id=int(row["person_id"]),
            camera_id=int(row["camera_id"] or 0),
            track_id=row.get("track_id") or None,
            frame_time=_parse_optional_float(row.get("frame_time", "")),
            visibility=_parse_optional_int(row.get("visibility", "")),
            bbox=bbox,
        )
    except (KeyError, ValueError, TypeError) as e:
        if isinstance(e, ManifestError):
            raise
        raise ManifestError(f"malformed row at {where}: {e}") from e


def parse_manifest(path: str | Path, format: str = "csv", split: str = "unsplit") -> Manifest:
    """Load a manifest from a CSV file or a Market-1501-style image directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "csv":
        records = []
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            missing = set(MANIFEST_COLUMNS[:4]) - set(reader.fieldnames or [])
            if missing:
                raise ManifestError(f"{path}: missing columns {sorted(missing)}")
            for i, row in enumerate(reader, start=2):
                records.append(_record_from_row(row, f"{path}:{i}"))
        return Manifest(split=split, records=records, source=str(path))
    if format == "market_dir":
        records = []
        for p in sorted(path.iterdir()):
            if p.suffix.lower() not in (".jpg", ".jpeg", ".png"):
                continue
            m = _MARKET_RE.match(p.name)
            if m is None:
                raise ManifestError(f"unparseable filename {p.name!r}")
            records.append(SampleRecord(
                image_id=p.stem,
                path=str(p.relative_to(path)),
                person_id=int(m.group("pid")),
                camera_id=int(m.group("cam")),
            ))
        return Manifest(split=split, records=records, source=str(path))
    raise ValueError(f"unknown manifest format {format!r}")


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            bbox = r.bbox or ("", "", "", "")
            w.writerow([
                r.image_id, r.path, r.person_id, r.camera_id,
                r.track_id or "",
                "" if r.frame_time is None else repr(r.frame_time),
                "" if r.visibility is None else r.visibility,
                *bbox,
            ])


def load_tracks(path: str | Path) -> list[TrackRecord]:
    """Read a track CSV (manifest columns + partition) into TrackRecords.

    Rows are grouped by track_id and sorted stably by (frame_time, image_id);
    tie order within equal frame times is unspecified upstream, so the sort is
    made canonical here.
    """
    rows_by_track: dict[str, list[SampleRecord]] = defaultdict(list)
    partitions: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for i, row in enumerate(reader, start=2):
            rec = _record_from_row(row, f"{path}:{i}")
            if rec.track_id is None:
                raise ManifestError(f"{path}:{i}: track row without track_id")
            rows_by_track[rec.track_id].append(rec)
            partitions[rec.track_id] = row.get("partition", "eval") or "eval"
    tracks = []
    for tid in sorted(rows_by_track):
        keyframes = sorted(rows_by_track[tid],
                           key=lambda r: (r.frame_time, r.image_id))
        tracks.append(TrackRecord(
            track_id=tid,
            person_id=keyframes[0].person_id,
            keyframes=keyframes,
            partition=partitions[tid],
        ))
    return tracks


def split_track_counts(n: int, cfg: SplitConfig) -> tuple[int, int, int]:
    """(gallery, omitted, query) keyframe counts for a track of n keyframes."""
    n_gal = math.floor(cfg.gallery_frac * n)
    n_query = math.floor(cfg.query_frac * n)
    return n_gal, n - n_gal - n_query, n_query


def build_track_split(
    tracks: list[TrackRecord], cfg: SplitConfig | None = None,
) -> tuple[Manifest, Manifest, Manifest]:
    train, query, gallery, _ = build_track_split_full(tracks, cfg)
    return train, query, gallery


def build_track_split_full(
    tracks: list[TrackRecord], cfg: SplitConfig | None = None,
) -> tuple[Manifest, Manifest, Manifest, dict[int, int]]:
    """Split tracks into (train, query, gallery) manifests.

    Keyframes below the visibility floor are dropped first. Eval tracks that
    keep at least min_keyframes are split per track: the first
    floor(gallery_frac*n) keyframes go to the gallery, the last
    floor(query_frac*n) to the query set, and the middle is omitted. Train
    tracks contribute all surviving keyframes. Identities are remapped to
    dense integers; the original labels are preserved on the identity map
    returned by :func:`identity_map`.
    """
    cfg = cfg or SplitConfig()
    tracks = sorted(tracks, key=lambda t: t.track_id)

    gallery_rows: list[SampleRecord] = []
    query_rows: list[SampleRecord] = []
    train_rows: list[SampleRecord] = []

    for track in tracks:
        surviving = [k for k in track.keyframes
                     if k.visibility is None or k.visibility >= cfg.min_visibility]
        if track.partition == "train":
            train_rows.extend(surviving)
            continue
        n = len(surviving)
        if n < cfg.min_keyframes:
            continue
        n_gal, _, n_query = split_track_counts(n, cfg)
        if n_query > 0 and n_gal == 0:
            log.warning("track %s: query identity would be absent from gallery; "
                        "dropping track", track.track_id)
            continue
        gallery_rows.extend(surviving[:n_gal])
        if n_query > 0:
            query_rows.extend(surviving[n - n_query:])

    remap = identity_map(train_rows + query_rows + gallery_rows)

    def relabel(rows, split):
        rows = sorted(rows, key=lambda r: (r.track_id or "", r.frame_time or 0.0,
                                           r.image_id))
        recs = [SampleRecord(
            image_id=r.image_id, path=r.path, person_id=remap[r.person_id],
            camera_id=r.camera_id, track_id=r.track_id, frame_time=r.frame_time,
            visibility=r.visibility, bbox=r.bbox) for r in rows]
        return Manifest(split=split, records=recs, source="build_track_split")

    return (relabel(train_rows, "train"),
            relabel(query_rows, "query"),
            relabel(gallery_rows, "gallery"),
            remap)


def identity_map(rows: list[SampleRecord]) -> dict[int, int]:
    """Dense remap original person_id -> 0..K-1 in ascending original order."""
    return {pid: i for i, pid in enumerate(sorted({r.person_id for r in rows}))}


def write_identity_map(remap: dict[int, int], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["person_id", "original_id"])
        for orig, dense in sorted(remap.items(), key=lambda kv: kv[1]):
            w.writerow([dense, orig])


@dataclass
class SplitReport:
    disjoint: bool
    overlapping_ids: list[str]
    query_counts: dict[int, int]
    gallery_counts: dict[int, int]
    gap_histogram: dict[int, int] | None  # bin index -> identity count
    bin_width: float
    notes: list[str]

    @property
    def ok(self) -> bool:
        return self.disjoint

    def to_text(self) -> str:
        lines = [
            f"disjoint: {str(self.disjoint).lower()}",
            f"query_identities: {len(self.query_counts)}",
            f"query_images: {sum(self.query_counts.values())}",
            f"gallery_identities: {len(self.gallery_counts)}",
            f"gallery_images: {sum(self.gallery_counts.values())}",
            f"gap_bin_width_s: {self.bin_width}",
        ]
        if self.overlapping_ids:
            lines.append("overlapping_image_ids: " + ",".join(self.overlapping_ids))
        for note in self.notes:
            lines.append(f"note: {note}")
        if self.gap_histogram is not None:
            lines.append("")
            lines.append("gap_bin_start_s\tidentities")
            for b in sorted(self.gap_histogram):
                lines.append(f"{b * self.bin_width:g}\t{self.gap_histogram[b]}")
        return "\n".join(lines) + "\n"


def validate_split(query: Manifest, gallery: Manifest, bin_width: float = 1.0) -> SplitReport:
    """Check query/gallery disjointness and summarize per-identity temporal gaps.

    The gap for an identity is the minimum of (query frame_time - gallery
    frame_time) over all same-identity pairs; identities lacking frame times
    are skipped and flagged.
    """
    if not query.records or not gallery.records:
        raise ManifestError("validate_split requires non-empty manifests")
    overlap = sorted(query.image_ids() & gallery.image_ids())

    query_counts: dict[int, int] = defaultdict(int)
    gallery_counts: dict[int, int] = defaultdict(int)
    for r in query.records:
        query_counts[r.person_id] += 1
    for r in gallery.records:
        gallery_counts[r.person_id] += 1

    notes = []
    q_times: dict[int, list[float]] = defaultdict(list)
    g_times: dict[int, list[float]] = defaultdict(list)
    for r in query.records:
        if r.frame_time is not None:
            q_times[r.person_id].append(r.frame_time)
    for r in gallery.records:
        if r.frame_time is not None:
            g_times[r.person_id].append(r.frame_time)

    histogram: dict[int, int] | None = None
    if q_times and g_times:
        histogram = defaultdict(int)
        for pid, qts in q_times.items():
            if pid not in g_times:
                continue
            gap = min(qt - gt for qt in qts for gt in g_times[pid])
            histogram[math.floor(gap / bin_width)] += 1
        histogram = dict(histogram)
    else:
        notes.append("no temporal data")

    missing = set(query_counts) - set(gallery_counts)
    if missing:
        notes.append(f"{len(missing)} query identities absent from gallery")

    return SplitReport(
        disjoint=not overlap,
        overlapping_ids=overlap,
        query_counts=dict(query_counts),
        gallery_counts=dict(gallery_counts),
        gap_histogram=histogram,
        bin_width=bin_width,
        notes=notes,
    )
