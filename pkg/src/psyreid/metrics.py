"""Similarity, gallery ranking, rank-1 accuracy, and mean average precision.

Similarity is normalized so that larger is always more similar: cosine in
[-1, 1], euclidean as the negated distance. Ranking ties are broken by
ascending gallery image_id, which makes every ranking canonical and results
bit-stable regardless of gallery order or thread count.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


@dataclass
class EvalConfig:
    similarity: str = "cosine"  # cosine | euclidean
    cross_camera_filter: bool = False
    junk_ids: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.similarity not in ("cosine", "euclidean"):
            raise MetricError(f"unknown similarity {self.similarity!r}")
        self.junk_ids = frozenset(self.junk_ids)


def similarity(a: np.ndarray, b: np.ndarray, kind: str = "cosine") -> float:
    """Pairwise similarity of two vectors; larger means more similar."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError(f"dim mismatch: {a.shape} vs {b.shape}")
    if kind == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            raise MetricError("cosine similarity undefined for zero vector")
        return float(np.dot(a, b) / (na * nb))
    if kind == "euclidean":
        return float(-np.linalg.norm(a - b))
    raise MetricError(f"unknown similarity {kind!r}")


def _similarity_matrix(q: np.ndarray, g: np.ndarray, kind: str) -> np.ndarray:
    """Query x gallery similarity scores; float32 inputs, float64 accumulation."""
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if kind == "cosine":
        qn = np.linalg.norm(q, axis=1, keepdims=True)
        gn = np.linalg.norm(g, axis=1, keepdims=True)
        if np.any(qn == 0) or np.any(gn == 0):
            raise MetricError("cosine similarity undefined for zero vector")
        return (q / qn) @ (g / gn).T
    # -||q - g|| expanded; clamp tiny negatives from cancellation
    sq = (q * q).sum(axis=1, keepdims=True)
    sg = (g * g).sum(axis=1)
    d2 = np.maximum(sq + sg - 2.0 * (q @ g.T), 0.0)
    return -np.sqrt(d2)


@dataclass
class RankingResult:
    query_id: str
    ordering: list[int]      # indices into the retained gallery list
    gallery_ids: list[str]   # retained gallery image_ids, input order
    flags: list[bool]        # same-identity flags aligned with ordering
    evaluable: bool
    reason: str = ""


def _retained_gallery(query_rec, gallery_manifest, cfg: EvalConfig) -> list[int]:
    keep = []
    for i, rec in enumerate(gallery_manifest.records):
        if rec.person_id in cfg.junk_ids:
            continue
        if (cfg.cross_camera_filter
                and rec.person_id == query_rec.person_id
                and rec.camera_id == query_rec.camera_id):
            continue
        keep.append(i)
    return keep


def rank_gallery(query_rec, query_vec, gallery_manifest, gallery_matrix,
                 cfg: EvalConfig) -> RankingResult:
    """Rank the retained gallery against one query by descending similarity."""
    keep = _retained_gallery(query_rec, gallery_manifest, cfg)
    if not keep:
        raise MetricError(f"query {query_rec.image_id}: empty retained gallery")
    recs = [gallery_manifest.records[i] for i in keep]
    g = gallery_matrix.select([r.image_id for r in recs])
    scores = _similarity_matrix(np.asarray(query_vec)[None, :], g.vectors,
                                cfg.similarity)[0]
    order = sorted(range(len(recs)),
                   key=lambda i: (-scores[i], recs[i].image_id))
    flags = [recs[i].person_id == query_rec.person_id for i in order]
    evaluable = any(flags)
    return RankingResult(
        query_id=query_rec.image_id,
        ordering=order,
        gallery_ids=[r.image_id for r in recs],
        flags=flags,
        evaluable=evaluable,
        reason="" if evaluable else "query identity absent from retained gallery",
    )


def average_precision(flags: list[bool]) -> float:
    """Non-interpolated AP: mean of precision@k over the hit positions."""
    total = sum(flags)
    if total == 0:
        raise MetricError("average_precision requires at least one match")
    hits = 0
    ap = 0.0
    for k, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            ap += hits / k
    return ap / total


@dataclass
class EvalResult:
    rank1: float
    mean_ap: float
    n_evaluable: int
    n_queries: int
    per_query: list[dict]  # query_id, rank_of_first_match, ap, evaluable


def evaluate(query_manifest, query_matrix, gallery_manifest, gallery_matrix,
             cfg: EvalConfig | None = None) -> EvalResult:
    """Rank every query and aggregate rank-1 accuracy and mAP.

    Queries whose identity is absent from the retained gallery are skipped
    and reported as non-evaluable. Aggregation order is fixed by sorted query
    image_id.
    """
    cfg = cfg or EvalConfig()
    records = sorted(query_manifest.records, key=lambda r: r.image_id)
    hits = 0
    ap_sum = 0.0
    n_eval = 0
    per_query = []
    for rec in records:
        vec = query_matrix.select([rec.image_id]).vectors[0]
        try:
            ranking = rank_gallery(rec, vec, gallery_manifest, gallery_matrix,
                                   cfg)
        except MetricError:
            # filters emptied the gallery for this query: skip, don't abort
            per_query.append({"query_id": rec.image_id, "rank_of_first_match": "",
                              "ap": "", "evaluable": False})
            continue
        if not ranking.evaluable:
            log.warning("query %s skipped: %s", rec.image_id, ranking.reason)
            per_query.append({"query_id": rec.image_id, "rank_of_first_match": "",
                              "ap": "", "evaluable": False})
            continue
        n_eval += 1
        first = ranking.flags.index(True) + 1
        hits += int(first == 1)
        ap = average_precision(ranking.flags)
        ap_sum += ap
        per_query.append({"query_id": rec.image_id, "rank_of_first_match": first,
                          "ap": ap, "evaluable": True})
    if n_eval == 0:
        raise MetricError("no evaluable queries")
    return EvalResult(rank1=hits / n_eval, mean_ap=ap_sum / n_eval,
                      n_evaluable=n_eval, n_queries=len(records),
                      per_query=per_query)


def rank1_accuracy(query_manifest, query_matrix, gallery_manifest,
                   gallery_matrix, cfg: EvalConfig | None = None) -> tuple[float, int]:
    res = evaluate(query_manifest, query_matrix, gallery_manifest,
                   gallery_matrix, cfg)
    return res.rank1, res.n_evaluable


def mean_average_precision(query_manifest, query_matrix, gallery_manifest,
                           gallery_matrix, cfg: EvalConfig | None = None) -> float:
    return evaluate(query_manifest, query_matrix, gallery_manifest,
                    gallery_matrix, cfg).mean_ap


def write_per_query_csv(result: EvalResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["query_id", "rank_of_first_match", "ap", "evaluable"])
        for row in result.per_query:
            ap = row["ap"]
            w.writerow([row["query_id"], row["rank_of_first_match"],
                        repr(ap) if ap != "" else "", row["evaluable"]])
