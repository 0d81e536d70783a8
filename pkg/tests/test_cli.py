from __future__ import annotations

import hashlib

import yaml

from psyreid import cli
from psyreid.dataset import write_manifest

from conftest import make_manifest, write_images


def build_fixture(root, n_ids=12, levels=None, noise=None, threads=1,
                  sweeps=None):
    levels = levels or [0.0, 0.2, 0.4, 0.6, 0.8]
    noise = noise or [0.0, 0.1, 0.25, 0.45, 0.7]
    query = make_manifest(n_ids, 1, split="query", prefix="q")
    gallery = make_manifest(n_ids, 2, split="gallery", prefix="g")
    (root / "images").mkdir(parents=True, exist_ok=True)
    write_images(query, root / "images", seed=1)
    write_manifest(query, root / "query.csv")
    write_manifest(gallery, root / "gallery.csv")
    cfg = {
        "dataset": "synthetic",
        "model_label": "synthetic-model",
        "query_manifest": "query.csv",
        "gallery_manifest": "gallery.csv",
        "images_root": "images",
        "sweeps": sweeps or [{"kind": "occlude_bottom", "levels": levels,
                              "seed": 5}],
        "provider": {"mode": "synthetic", "dim": 16, "seed": 3,
                     "noise_scales": noise},
        "eval": {"similarity": "cosine"},
        "output_root": "out",
        "seed": 11,
    }
    with open(root / "run.yaml", "w") as f:
        yaml.safe_dump(cfg, f)
    return root / "run.yaml"


def csv_digests(root):
    return {p.relative_to(root): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*.csv"))}


class TestRun:
    def test_fixture_produces_curves(self, tmp_path):
        config = build_fixture(tmp_path)
        rc = cli.main(["run", "--config", str(config)])
        assert rc == 0
        results = tmp_path / "out" / "results" / "synthetic" / "occlude_bottom"
        assert (results / "curve.svg").exists()
        assert (results / "points.csv").exists()

    def test_rerun_skips_stages_and_is_byte_identical(self, tmp_path):
        config = build_fixture(tmp_path)
        assert cli.main(["run", "--config", str(config)]) == 0
        first = csv_digests(tmp_path / "out")
        svg_first = (tmp_path / "out" / "results" / "synthetic" /
                     "occlude_bottom" / "curve.svg").read_bytes()
        assert cli.main(["run", "--config", str(config)]) == 0
        assert csv_digests(tmp_path / "out") == first
        svg_second = (tmp_path / "out" / "results" / "synthetic" /
                      "occlude_bottom" / "curve.svg").read_bytes()
        assert svg_first == svg_second

    def test_thread_count_does_not_change_output(self, tmp_path):
        c1 = build_fixture(tmp_path / "a")
        c2 = build_fixture(tmp_path / "b")
        assert cli.main(["--threads", "1", "run", "--config", str(c1),
                         "--no-resume"]) == 0
        assert cli.main(["--threads", "4", "run", "--config", str(c2),
                         "--no-resume"]) == 0
        d1 = csv_digests(tmp_path / "a" / "out")
        d2 = csv_digests(tmp_path / "b" / "out")
        assert d1 == d2

    def test_missing_provider_fails_fast(self, tmp_path):
        config = build_fixture(tmp_path)
        cfg = yaml.safe_load(config.read_text())
        cfg["provider"] = {"mode": "file", "command": ["/nonexistent/prov"]}
        config.write_text(yaml.safe_dump(cfg))
        rc = cli.main(["run", "--config", str(config)])
        assert rc == cli.EXIT_VALIDATION
        assert not (tmp_path / "out" / "results").exists()


class TestSubcommands:
    def test_build_split(self, tmp_path):
        rows = ["image_id,path,person_id,camera_id,track_id,frame_time,"
                "visibility,x1,y1,x2,y2,partition"]
        for t in range(3):
            for i in range(6):
                rows.append(f"t{t}_{i},t{t}_{i}.png,{t},0,t{t},{i}.0,4,,,,,eval")
        (tmp_path / "tracks.csv").write_text("\n".join(rows) + "\n")
        rc = cli.main(["build-split", str(tmp_path / "tracks.csv"),
                       "--out", str(tmp_path / "split")])
        assert rc == 0
        assert (tmp_path / "split" / "query.csv").exists()
        assert (tmp_path / "split" / "split_report.txt").exists()
        report = (tmp_path / "split" / "split_report.txt").read_text()
        assert "disjoint: true" in report

    def test_sweep_and_eval_chain(self, tmp_path):
        query = make_manifest(5, 1, split="query", prefix="q")
        write_images(query, tmp_path, seed=4)
        write_manifest(query, tmp_path / "q.csv")
        rc = cli.main(["sweep", str(tmp_path / "q.csv"), "--kind",
                       "occlude_bottom", "--levels", "0.0", "0.5",
                       "--out", str(tmp_path / "stim"),
                       "--images-root", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "stim" / "stimuli_occlude_bottom.csv").exists()

    def test_pose_cluster(self, tmp_path):
        import numpy as np
        rng = np.random.default_rng(0)
        header = ["image_id"] + [f"j{j}{a}" for j in range(17) for a in "xyc"] \
            + ["x1", "y1", "x2", "y2"]
        lines = [",".join(header)]
        for c, base in enumerate([20.0, 80.0]):
            for i in range(20):
                vals = []
                for j in range(17):
                    vals += [f"{base + rng.normal(0, 1):.3f}",
                             f"{base + rng.normal(0, 1):.3f}", "0.9"]
                lines.append(",".join([f"p{c}_{i}"] + vals +
                                      ["0", "0", "100", "100"]))
        (tmp_path / "pose.csv").write_text("\n".join(lines) + "\n")
        rc = cli.main(["pose-cluster", str(tmp_path / "pose.csv"),
                       "--k-max", "6", "--out", str(tmp_path / "poseout")])
        assert rc == 0
        assert (tmp_path / "poseout" / "clusters.csv").exists()

    def test_validation_exit_code(self, tmp_path):
        rc = cli.main(["run", "--config", str(tmp_path / "missing.yaml")])
        assert rc == cli.EXIT_VALIDATION
