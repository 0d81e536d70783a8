"""Pose-cluster dataset analysis: normalization, k-means, elbow, heatmaps.

Keypoints are COCO-17 (x, y, confidence) triples. Coordinates are normalized
by bounding-box extent to a unit frame; low-confidence joints are replaced by
a (-1, -1) sentinel. K-means uses a sentinel-aware distance: sentinel
dimensions are skipped pairwise and the squared distance rescaled by
(n_dims / n_compared), which changes the clustering of heavily occluded
poses and is therefore fixed here rather than configurable.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import rng_for

log = logging.getLogger(__name__)

N_JOINTS = 17
N_DIMS = 2 * N_JOINTS
SENTINEL = -1.0
CONFIDENCE_FLOOR = 0.3
KMEANS_TOL = 1e-8
KMEANS_MAX_ITER = 300
KMEANS_RESTARTS = 10


class PoseError(ValueError):
    pass


@dataclass
class PoseRecord:
    image_id: str
    keypoints: np.ndarray  # 17 x 3 (x, y, confidence)
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if self.keypoints.shape != (N_JOINTS, 3):
            raise PoseError(f"{self.image_id}: expected {N_JOINTS}x3 keypoints")
        conf = self.keypoints[:, 2]
        if np.any(conf < 0) or np.any(conf > 1):
            raise PoseError(f"{self.image_id}: confidences outside [0, 1]")


def read_pose_csv(path: str | Path,
                  bboxes: dict[str, tuple] | None = None) -> list[PoseRecord]:
    """Pose CSV: image_id,j0x,j0y,j0c,...,j16x,j16y,j16c (+ optional bbox cols)."""
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            kp = np.array([[float(row[f"j{j}x"]), float(row[f"j{j}y"]),
                            float(row[f"j{j}c"])] for j in range(N_JOINTS)])
            if bboxes is not None:
                bbox = bboxes[row["image_id"]]
            elif "x1" in row:
                bbox = tuple(float(row[c]) for c in ("x1", "y1", "x2", "y2"))
            else:
                raise PoseError(f"{row['image_id']}: no bbox available")
            records.append(PoseRecord(row["image_id"], kp, bbox))
    return records


def normalize_pose(rec: PoseRecord) -> np.ndarray:
    """Map keypoints to bbox-relative unit coordinates, sentinel below floor."""
    x1, y1, x2, y2 = rec.bbox
    if x2 <= x1 or y2 <= y1:
        raise PoseError(f"{rec.image_id}: degenerate bbox {rec.bbox}")
    out = np.empty(N_DIMS)
    for j in range(N_JOINTS):
        x, y, conf = rec.keypoints[j]
        if conf < CONFIDENCE_FLOOR:
            out[2 * j] = out[2 * j + 1] = SENTINEL
        else:
            out[2 * j] = (x - x1) / (x2 - x1)
            out[2 * j + 1] = (y - y1) / (y2 - y1)
    return out


def _masked_sq_dist(points: np.ndarray, observed: np.ndarray,
                    centroid: np.ndarray) -> np.ndarray:
    """Squared distance skipping sentinel dims, rescaled by dims/compared."""
    diff = np.where(observed, points - centroid[None, :], 0.0)
    d2 = (diff * diff).sum(axis=1)
    n_cmp = observed.sum(axis=1)
    n_cmp = np.maximum(n_cmp, 1)
    return d2 * (points.shape[1] / n_cmp)


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray           # k x 34
    assignments: np.ndarray         # n, cluster index per input point
    inertia: float
    points: np.ndarray              # normalized inputs, n x 34
    ids: list[str] | None = None
    inertias: list[float] | None = None  # per candidate k for elbow runs


def _kmeans_once(points: np.ndarray, observed: np.ndarray, k: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    n = len(points)
    # k-means++ seeding under the sentinel-aware distance
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = np.where(observed[first], points[first], 0.5)
    d2 = _masked_sq_dist(points, observed, centroids[0])
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = np.where(observed[idx], points[idx], 0.5)
        d2 = np.minimum(d2, _masked_sq_dist(points, observed, centroids[j]))

    assignments = np.zeros(n, dtype=int)
    for _ in range(KMEANS_MAX_ITER):
        dists = np.stack([_masked_sq_dist(points, observed, c)
                          for c in centroids], axis=1)
        assignments = np.argmin(dists, axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = assignments == j
            if not members.any():
                continue
            obs = observed[members]
            pts = np.where(obs, points[members], 0.0)
            counts = obs.sum(axis=0)
            with np.errstate(invalid="ignore"):
                mean = pts.sum(axis=0) / counts
            new_centroids[j] = np.where(counts > 0, mean, centroids[j])
        movement = float(np.max(np.abs(new_centroids - centroids)))
        centroids = new_centroids
        if movement < KMEANS_TOL:
            break
    dists = np.stack([_masked_sq_dist(points, observed, c)
                      for c in centroids], axis=1)
    assignments = np.argmin(dists, axis=1)
    inertia = float(dists[np.arange(n), assignments].sum())
    return centroids, assignments, inertia


def kmeans(points: np.ndarray, k: int, seed: int = 0,
           ids: list[str] | None = None) -> ClusterModel:
    """Best-of-10-restarts Lloyd k-means with k-means++ seeding."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k < 1 or n < k:
        raise PoseError(f"need n >= k >= 1, got n={n}, k={k}")
    observed = points != SENTINEL
    best = None
    for r in range(KMEANS_RESTARTS):
        result = _kmeans_once(points, observed, k, rng_for(seed, "restart", r, k))
        if best is None or result[2] < best[2]:
            best = result
    centroids, assignments, inertia = best
    return ClusterModel(k=k, centroids=centroids, assignments=assignments,
                        inertia=inertia, points=points, ids=ids)


def elbow_select(points: np.ndarray, k_max: int, seed: int = 0) -> tuple[int, list[float]]:
    """Pick k by maximal perpendicular distance to the inertia chord.

    Runs k-means for k = 1..k_max and returns the k whose (k, inertia) point
    is farthest from the line through (1, inertia_1) and (k_max, inertia_kmax).
    """
    if k_max < 2 or k_max > 12:
        raise PoseError("k_max must be in 2..12")
    inertias = [kmeans(points, k, seed=seed).inertia for k in range(1, k_max + 1)]
    x1, y1 = 1.0, inertias[0]
    x2, y2 = float(k_max), inertias[-1]
    norm = np.hypot(x2 - x1, y2 - y1)
    best_k, best_d = 1, -1.0
    for k in range(1, k_max + 1):
        yk = inertias[k - 1]
        d = abs((y2 - y1) * k - (x2 - x1) * yk + x2 * y1 - y2 * x1) / max(norm, 1e-300)
        if d > best_d:
            best_k, best_d = k, d
    return best_k, inertias


def joint_heatmap(model: ClusterModel, cluster: int, grid: int = 32) -> np.ndarray:
    """Density grid of non-sentinel joint locations for one cluster, max 1."""
    if not 0 <= cluster < model.k:
        raise PoseError(f"cluster {cluster} out of range")
    heat = np.zeros((grid, grid))
    members = model.points[model.assignments == cluster]
    if len(members) == 0:
        log.warning("cluster %d is empty", cluster)
        return heat
    for row in members:
        for j in range(N_JOINTS):
            x, y = row[2 * j], row[2 * j + 1]
            if x == SENTINEL and y == SENTINEL:
                continue
            xi = min(max(int(x * grid), 0), grid - 1)
            yi = min(max(int(y * grid), 0), grid - 1)
            heat[yi, xi] += 1
    peak = heat.max()
    if peak > 0:
        heat /= peak
    return heat


def write_heatmap_pgm(heat: np.ndarray, path: str | Path) -> None:
    grid = heat.shape[0]
    levels = np.rint(heat * 255).astype(int)
    with open(path, "w", encoding="ascii") as f:
        f.write(f"P2\n{heat.shape[1]} {grid}\n255\n")
        for row in levels:
            f.write(" ".join(str(v) for v in row) + "\n")


def write_cluster_summary(model: ClusterModel, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["cluster", "size"])
        for j in range(model.k):
            w.writerow([j, int((model.assignments == j).sum())])
