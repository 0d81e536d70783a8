from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psyreid.dataset import Manifest, SampleRecord
from psyreid.embed import EmbeddingMatrix, synthetic_embeddings
from psyreid.metrics import (EvalConfig, MetricError, average_precision,
                             evaluate, rank_gallery, similarity)

from conftest import make_manifest


def oracle_ap_pr_curve(flags):
    """Independent oracle: area under the PR curve as sum of recall steps."""
    total = sum(flags)
    area = 0.0
    hits = 0
    for k, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            area += (1.0 / total) * (hits / k)
    return area


def oracle_eval(query_manifest, q_vecs, gallery_manifest, g_vecs, cfg):
    """Brute-force reference: full similarity matrix, full sort, PR areas."""
    rank1_hits = 0
    aps = []
    n_eval = 0
    for rec in query_manifest.records:
        qv = q_vecs[rec.image_id]
        scored = []
        for grec in gallery_manifest.records:
            if grec.person_id in cfg.junk_ids:
                continue
            if (cfg.cross_camera_filter and grec.person_id == rec.person_id
                    and grec.camera_id == rec.camera_id):
                continue
            scored.append((similarity(qv, g_vecs[grec.image_id], cfg.similarity),
                           grec.image_id, grec.person_id))
        scored.sort(key=lambda t: (-t[0], t[1]))
        flags = [pid == rec.person_id for _, _, pid in scored]
        if not any(flags):
            continue
        n_eval += 1
        rank1_hits += int(flags[0])
        aps.append(oracle_ap_pr_curve(flags))
    return rank1_hits, n_eval, (sum(aps) / n_eval if n_eval else float("nan"))


def random_fixture(rng, max_gallery=10, max_query=5, max_dim=8):
    dim = int(rng.integers(2, max_dim + 1))
    n_ids = int(rng.integers(1, 5))
    n_g = int(rng.integers(1, max_gallery + 1))
    n_q = int(rng.integers(1, max_query + 1))
    g_recs = [SampleRecord(f"g{i}", f"g{i}.png", int(rng.integers(n_ids)),
                           int(rng.integers(3))) for i in range(n_g)]
    q_recs = [SampleRecord(f"q{i}", f"q{i}.png", int(rng.integers(n_ids)),
                           int(rng.integers(3))) for i in range(n_q)]
    g_vecs = {r.image_id: rng.normal(size=dim).astype(np.float32) + 0.1
              for r in g_recs}
    q_vecs = {r.image_id: rng.normal(size=dim).astype(np.float32) + 0.1
              for r in q_recs}
    return (Manifest(split="query", records=q_recs), q_vecs,
            Manifest(split="gallery", records=g_recs), g_vecs)


class TestSimilarity:
    def test_cosine_identity(self):
        v = np.array([1.0, 2.0, 3.0])
        assert similarity(v, v) == pytest.approx(1.0)

    def test_cosine_orthogonal(self):
        assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_euclidean(self):
        assert similarity(np.array([1.0, 0.0]), np.array([4.0, 0.0]),
                          "euclidean") == -3.0

    def test_zero_vector_cosine(self):
        with pytest.raises(MetricError, match="zero"):
            similarity(np.zeros(3), np.ones(3))

    def test_dim_mismatch(self):
        with pytest.raises(MetricError, match="mismatch"):
            similarity(np.ones(3), np.ones(4))


class TestAveragePrecision:
    def test_single_relevant_first(self):
        assert average_precision([True]) == 1.0

    def test_spec_formula(self):
        assert average_precision([True, False, True]) == \
            pytest.approx((1 + 2 / 3) / 2, abs=1e-12)

    def test_all_false_raises(self):
        with pytest.raises(MetricError):
            average_precision([False, False])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=8).filter(any))
    def test_matches_pr_curve_oracle(self, flags):
        assert average_precision(flags) == \
            pytest.approx(oracle_ap_pr_curve(flags), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=10).filter(any))
    def test_bounds_and_perfect_ordering(self, flags):
        ap = average_precision(flags)
        assert 0.0 <= ap <= 1.0
        sorted_first = all(flags[i] >= flags[i + 1] for i in range(len(flags) - 1))
        assert (ap == 1.0) == sorted_first


class TestRankGallery:
    def manifest1(self):
        return Manifest(split="gallery",
                        records=[SampleRecord("g0", "g0.png", 7, 0)])

    def test_singleton(self):
        q = SampleRecord("q0", "q0.png", 7, 1)
        gm = EmbeddingMatrix(["g0"], np.ones((1, 4), np.float32))
        r = rank_gallery(q, np.ones(4), self.manifest1(), gm, EvalConfig())
        assert r.ordering == [0] and r.flags == [True] and r.evaluable

    def test_tie_break_by_image_id(self):
        gallery = Manifest(split="gallery", records=[
            SampleRecord("gz", "z.png", 1, 0), SampleRecord("ga", "a.png", 2, 0)])
        gm = EmbeddingMatrix(["gz", "ga"], np.ones((2, 4), np.float32))
        q = SampleRecord("q", "q.png", 1, 1)
        r = rank_gallery(q, np.ones(4), gallery, gm, EvalConfig())
        ranked_ids = [r.gallery_ids[i] for i in r.ordering]
        assert ranked_ids == ["ga", "gz"]

    def test_cross_camera_filter_skips_query(self):
        gallery = Manifest(split="gallery",
                           records=[SampleRecord("g0", "g0.png", 7, camera_id=2)])
        gm = EmbeddingMatrix(["g0"], np.ones((1, 4), np.float32))
        q = SampleRecord("q0", "q0.png", 7, camera_id=2)
        cfg = EvalConfig(cross_camera_filter=True)
        with pytest.raises(MetricError, match="empty retained gallery"):
            rank_gallery(q, np.ones(4), gallery, gm, cfg)

    def test_scale_invariance_of_ordering(self, rng):
        qm, q_vecs, gm, g_vecs = random_fixture(rng)
        q = qm.records[0]
        mat = EmbeddingMatrix(list(g_vecs), np.stack(list(g_vecs.values())))
        base = rank_gallery(q, q_vecs[q.image_id], gm, mat, EvalConfig())
        scaled_vecs = {k: (v * 7.5 if k == q.image_id else v)
                       for k, v in q_vecs.items()}
        scaled = rank_gallery(q, scaled_vecs[q.image_id], gm, mat, EvalConfig())
        assert base.ordering == scaled.ordering

    def test_gallery_permutation_invariant(self, rng):
        qm, q_vecs, gm, g_vecs = random_fixture(rng)
        mat = EmbeddingMatrix(list(g_vecs), np.stack(list(g_vecs.values())))
        q = qm.records[0]
        base = rank_gallery(q, q_vecs[q.image_id], gm, mat, EvalConfig())
        perm = Manifest(split="gallery", records=list(reversed(gm.records)))
        other = rank_gallery(q, q_vecs[q.image_id], perm, mat, EvalConfig())
        assert [base.gallery_ids[i] for i in base.ordering] == \
            [other.gallery_ids[i] for i in other.ordering]


class TestEvaluate:
    def test_zero_noise_synthetic_is_perfect(self):
        query = make_manifest(10, 1, prefix="q")
        gallery = make_manifest(10, 2, split="gallery", prefix="g")
        qm = synthetic_embeddings(query, 0.0, dim=8, seed=4)
        gm = synthetic_embeddings(gallery, 0.0, dim=8, seed=4)
        res = evaluate(query, qm, gallery, gm)
        assert res.rank1 == 1.0 and res.mean_ap == 1.0

    def test_adversarial_all_wrong(self):
        # two identities with swapped anchors: every top-1 is the wrong id
        query = Manifest(split="query", records=[
            SampleRecord("q0", "q0.png", 0), SampleRecord("q1", "q1.png", 1)])
        gallery = Manifest(split="gallery", records=[
            SampleRecord("g0", "g0.png", 0), SampleRecord("g1", "g1.png", 1)])
        e0 = np.array([1, 0], np.float32)
        e1 = np.array([0, 1], np.float32)
        qm = EmbeddingMatrix(["q0", "q1"], np.stack([e1, e0]))
        gm = EmbeddingMatrix(["g0", "g1"], np.stack([e0, e1]))
        res = evaluate(query, qm, gallery, gm)
        assert res.rank1 == 0.0

    def test_rank1_equals_map_single_match_at_top(self):
        query = make_manifest(6, 1, prefix="q")
        gallery = make_manifest(6, 1, split="gallery", prefix="g")
        qm = synthetic_embeddings(query, 0.0, dim=8, seed=2)
        gm = synthetic_embeddings(gallery, 0.0, dim=8, seed=2)
        res = evaluate(query, qm, gallery, gm)
        assert res.rank1 == res.mean_ap == 1.0

    @pytest.mark.parametrize("sim", ["cosine", "euclidean"])
    def test_matches_bruteforce_oracle(self, rng, sim):
        for _ in range(100):
            qm_man, q_vecs, gm_man, g_vecs = random_fixture(rng)
            cfg = EvalConfig(similarity=sim,
                             cross_camera_filter=bool(rng.integers(2)))
            hits, n_eval, mean_ap = oracle_eval(qm_man, q_vecs, gm_man, g_vecs, cfg)
            if n_eval == 0:
                continue
            qmat = EmbeddingMatrix(list(q_vecs), np.stack(list(q_vecs.values())))
            gmat = EmbeddingMatrix(list(g_vecs), np.stack(list(g_vecs.values())))
            res = evaluate(qm_man, qmat, gm_man, gmat, cfg)
            assert res.n_evaluable == n_eval
            assert round(res.rank1 * n_eval) == hits  # bitwise hit count
            assert math.isclose(res.mean_ap, mean_ap, abs_tol=1e-12)

    def test_junk_ids_excluded(self):
        query = Manifest(split="query", records=[SampleRecord("q0", "q.png", 1)])
        gallery = Manifest(split="gallery", records=[
            SampleRecord("g0", "g0.png", -1), SampleRecord("g1", "g1.png", 1)])
        qm = EmbeddingMatrix(["q0"], np.ones((1, 4), np.float32))
        gm = EmbeddingMatrix(["g0", "g1"],
                             np.stack([np.ones(4), np.ones(4) * 0.5]).astype(np.float32))
        res = evaluate(query, qm, gallery, gm, EvalConfig(junk_ids=frozenset({-1})))
        assert res.rank1 == 1.0
