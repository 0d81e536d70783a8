"""Command-line entry point wiring the full evaluation pipeline.

Subcommands map one-to-one onto module operations; `run` chains
sweep -> embed -> eval -> fit -> report from a single YAML config and is
resumable: a stage whose outputs exist with a matching config fingerprint
is skipped. Partial outputs carry a .partial suffix until complete.

Exit codes: 0 success, 2 validation error, 3 provider failure,
4 evaluation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import analysis, dataset, embed, metrics, perturb, psychometrics, report

log = logging.getLogger("psyreid")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PROVIDER = 3
EXIT_EVALUATION = 4


class ValidationError(ValueError):
    pass


def _atomic_write_text(path: Path, text: str) -> None:
    partial = path.with_suffix(path.suffix + ".partial")
    partial.write_text(text, encoding="utf-8")
    os.replace(partial, path)


def _stage_done(stage_dir: Path, fingerprint: str) -> bool:
    fp = stage_dir / ".fingerprint"
    return fp.exists() and fp.read_text(encoding="utf-8").strip() == fingerprint


def _mark_stage(stage_dir: Path, fingerprint: str) -> None:
    _atomic_write_text(stage_dir / ".fingerprint", fingerprint)


def cmd_build_split(args) -> int:
    tracks = dataset.load_tracks(args.track_csv)
    cfg = dataset.SplitConfig(
        gallery_frac=args.gallery_frac, query_frac=args.query_frac,
        min_keyframes=args.min_keyframes, min_visibility=args.min_visibility)
    train, query, gallery, remap = dataset.build_track_split_full(tracks, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.write_manifest(train, out / "train.csv")
    dataset.write_manifest(query, out / "query.csv")
    dataset.write_manifest(gallery, out / "gallery.csv")
    dataset.write_identity_map(remap, out / "identity_map.csv")
    if query.records and gallery.records:
        rep = dataset.validate_split(query, gallery, bin_width=args.bin_width)
        _atomic_write_text(out / "split_report.txt", rep.to_text())
    print(f"train={len(train)} query={len(query)} gallery={len(gallery)}")
    return EXIT_OK


def cmd_validate_split(args) -> int:
    query = dataset.parse_manifest(args.query, split="query")
    gallery = dataset.parse_manifest(args.gallery, split="gallery")
    rep = dataset.validate_split(query, gallery, bin_width=args.bin_width)
    sys.stdout.write(rep.to_text())
    return EXIT_OK if rep.ok else EXIT_VALIDATION


def cmd_sweep(args) -> int:
    manifest = dataset.parse_manifest(args.manifest, split="query")
    sweep = perturb.StimulusSweep(kind=args.kind,
                                  levels=tuple(float(v) for v in args.levels),
                                  seed=args.seed)
    occluders = (perturb.OccluderLibrary.load(args.occluders)
                 if args.occluders else None)
    stim = perturb.materialize_sweep(manifest, sweep, args.out,
                                     images_root=args.images_root,
                                     occluders=occluders, threads=args.threads)
    stim.write(Path(args.out) / f"stimuli_{args.kind}.csv")
    print(f"wrote {len(stim.ok_rows())}/{len(stim.rows)} stimuli")
    return EXIT_OK


def cmd_embed(args) -> int:
    stim = perturb.StimulusManifest.read(args.stimuli)
    cfg = embed.ProviderConfig(mode=args.mode, command=args.command,
                               timeout=args.timeout)
    matrix = embed.run_provider(cfg, stim, stimuli_root=args.stimuli_root,
                                scratch_dir=Path(args.out).parent)
    embed.write_embeddings(matrix, args.out)
    print(f"embedded {len(matrix)} stimuli (dim={matrix.dim})")
    return EXIT_OK


def cmd_eval(args) -> int:
    query = dataset.parse_manifest(args.query_manifest, split="query")
    gallery = dataset.parse_manifest(args.gallery_manifest, split="gallery")
    qm = embed.read_embeddings(args.query_emb)
    gm = embed.read_embeddings(args.gallery_emb)
    cfg = metrics.EvalConfig(similarity=args.similarity,
                             cross_camera_filter=args.cross_camera_filter)
    res = metrics.evaluate(query, qm, gallery, gm, cfg)
    if args.per_query:
        metrics.write_per_query_csv(res, args.per_query)
    print(f"rank1={res.rank1:.6f} mAP={res.mean_ap:.6f} "
          f"evaluable={res.n_evaluable}/{res.n_queries}")
    return EXIT_OK


def cmd_fit(args) -> int:
    levels, rank1s = [], []
    import csv as _csv
    with open(args.points_csv, newline="", encoding="utf-8") as f:
        for row in _csv.DictReader(f):
            levels.append(float(row["level"]))
            rank1s.append(float(row["rank1"]))
    fit = psychometrics.fit_logistic(np.array(levels), np.array(rank1s))
    print(f"c={fit.c:.6g} k={fit.k:.6g} x0={fit.x0:.6g} y0={fit.y0:.6g} "
          f"rss={fit.rss:.3g} converged={fit.converged}")
    return EXIT_OK if fit.converged else EXIT_EVALUATION


def cmd_pose_cluster(args) -> int:
    records = analysis.read_pose_csv(args.pose_csv)
    points = np.stack([analysis.normalize_pose(r) for r in records])
    k, inertias = analysis.elbow_select(points, args.k_max, seed=args.seed)
    model = analysis.kmeans(points, k, seed=args.seed,
                            ids=[r.image_id for r in records])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_cluster_summary(model, out / "clusters.csv")
    for j in range(k):
        heat = analysis.joint_heatmap(model, j, grid=args.grid)
        analysis.write_heatmap_pgm(heat, out / f"heatmap_{j}.pgm")
    print(f"selected k={k}; inertias="
          + ",".join(f"{v:.4g}" for v in inertias))
    return EXIT_OK


def _load_run_config(path: Path) -> dict:
    with open(path, encoding="utf-8") as f:
        cfg = yaml.safe_load(f)
    for key in ("query_manifest", "gallery_manifest", "sweeps", "provider",
                "output_root"):
        if key not in cfg:
            raise ValidationError(f"run config missing {key!r}")
    base = path.parent
    for key in ("query_manifest", "gallery_manifest", "images_root",
                "gallery_embeddings", "occluders"):
        if cfg.get(key):
            cfg[key] = str((base / cfg[key]).resolve())
    for p in ("query_manifest", "gallery_manifest"):
        if not Path(cfg[p]).exists():
            raise ValidationError(f"{p} not found: {cfg[p]}")
    provider = cfg["provider"]
    if provider.get("mode") not in ("file", "subprocess", "synthetic"):
        raise ValidationError(f"unknown provider mode {provider.get('mode')!r}")
    if provider["mode"] in ("file", "subprocess"):
        command = provider.get("command") or []
        if not command:
            raise ValidationError("provider command required")
        exe = command[0]
        from shutil import which
        if not (Path(exe).exists() or which(exe)):
            raise ValidationError(f"provider executable not found: {exe}")
    for sweep in cfg["sweeps"]:
        perturb.StimulusSweep(kind=sweep["kind"],
                              levels=tuple(float(v) for v in sweep["levels"]),
                              seed=int(sweep.get("seed", cfg.get("seed", 0))))
    return cfg


def _embeddings_for_level(cfg, provider, sweep, stim_rows, level_index,
                          query_manifest, out_path: Path):
    """Embed one level's stimuli, caching the EMB1 file."""
    rows = [r for r in stim_rows if int(r["level_index"]) == level_index
            and r["status"] == "ok"]
    if provider["mode"] == "synthetic":
        noise_scales = provider.get("noise_scales")
        if noise_scales is None or len(noise_scales) != len(sweep["levels"]):
            raise ValidationError("synthetic provider needs one noise_scale "
                                  "per sweep level")
        matrix = embed.synthetic_embeddings(
            query_manifest, noise_scale=float(noise_scales[level_index]),
            dim=int(provider.get("dim", 32)),
            seed=int(provider.get("seed", cfg.get("seed", 0))))
    else:
        pcfg = embed.ProviderConfig(mode=provider["mode"],
                                    command=list(provider["command"]),
                                    timeout=float(provider.get("timeout", 300)))
        stim = perturb.StimulusManifest(rows=rows)
        matrix = embed.run_provider(pcfg, stim,
                                    stimuli_root=out_path.parent,
                                    scratch_dir=out_path.parent)
    embed.write_embeddings(matrix, out_path)
    return matrix


def cmd_run(args) -> int:
    cfg = _load_run_config(Path(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    root = Path(cfg["output_root"])
    if not root.is_absolute():
        root = Path(args.config).resolve().parent / root
    root.mkdir(parents=True, exist_ok=True)
    query_manifest = dataset.parse_manifest(cfg["query_manifest"], split="query")
    gallery_manifest = dataset.parse_manifest(cfg["gallery_manifest"],
                                              split="gallery")
    eval_cfg = metrics.EvalConfig(
        similarity=cfg.get("eval", {}).get("similarity", "cosine"),
        cross_camera_filter=bool(
            cfg.get("eval", {}).get("cross_camera_filter", False)))
    provider = cfg["provider"]
    model_label = cfg.get("model_label", "model")
    dataset_label = cfg.get("dataset", "dataset")
    occluders = (perturb.OccluderLibrary.load(cfg["occluders"])
                 if cfg.get("occluders") else None)

    # gallery embeddings: computed once from unperturbed images
    gallery_dir = root / "gallery"
    gallery_dir.mkdir(exist_ok=True)
    gal_fp = report.config_fingerprint(
        {"provider": provider, "gallery": cfg["gallery_manifest"],
         "seed": cfg.get("seed", 0)})
    gal_path = gallery_dir / "gallery.emb1"
    if args.resume and _stage_done(gallery_dir, gal_fp) and gal_path.exists():
        gallery_matrix = embed.read_embeddings(gal_path)
    else:
        if provider["mode"] == "synthetic":
            gallery_matrix = embed.synthetic_embeddings(
                gallery_manifest,
                noise_scale=float(provider.get("gallery_noise", 0.0)),
                dim=int(provider.get("dim", 32)),
                seed=int(provider.get("seed", cfg.get("seed", 0))))
        else:
            gal_stim = perturb.StimulusManifest(rows=[
                {"image_id": r.image_id, "kind": "identity", "level": "0",
                 "level_index": "0",
                 "path": str(Path(cfg.get("images_root", ".")) / r.path),
                 "status": "ok"}
                for r in gallery_manifest.records])
            pcfg = embed.ProviderConfig(mode=provider["mode"],
                                        command=list(provider["command"]),
                                        timeout=float(provider.get("timeout", 300)))
            gallery_matrix = embed.run_provider(pcfg, gal_stim,
                                                stimuli_root="/",
                                                scratch_dir=gallery_dir)
        embed.write_embeddings(gallery_matrix, gal_path)
        _mark_stage(gallery_dir, gal_fp)

    records = []
    for sweep_cfg in cfg["sweeps"]:
        kind = sweep_cfg["kind"]
        seed = int(sweep_cfg.get("seed", cfg.get("seed", 0)))
        sweep = perturb.StimulusSweep(
            kind=kind, levels=tuple(float(v) for v in sweep_cfg["levels"]),
            seed=seed)
        sweep_dir = root / "stimuli" / kind
        sweep_dir.mkdir(parents=True, exist_ok=True)
        sweep_fp = report.config_fingerprint(
            {"kind": kind, "levels": list(sweep.levels), "seed": seed,
             "query": cfg["query_manifest"]})
        stim_csv = sweep_dir / "stimuli.csv"
        if not (args.resume and _stage_done(sweep_dir, sweep_fp)
                and stim_csv.exists()):
            stim = perturb.materialize_sweep(
                query_manifest, sweep, sweep_dir,
                images_root=cfg.get("images_root", "."),
                occluders=occluders, threads=args.threads)
            stim.write(stim_csv)
            _mark_stage(sweep_dir, sweep_fp)
        stim = perturb.StimulusManifest.read(stim_csv)

        emb_dir = root / "emb" / kind
        emb_dir.mkdir(parents=True, exist_ok=True)
        emb_fp = report.config_fingerprint(
            {"sweep": sweep_fp, "provider": provider,
             "seed": cfg.get("seed", 0)})
        per_level = {}
        resume_emb = args.resume and _stage_done(emb_dir, emb_fp)
        for li, lv in enumerate(sweep.levels):
            emb_path = emb_dir / f"level_{li}.emb1"
            if resume_emb and emb_path.exists():
                per_level[lv] = embed.read_embeddings(emb_path)
            else:
                per_level[lv] = _embeddings_for_level(
                    cfg, provider, sweep_cfg, stim.rows, li,
                    query_manifest, emb_path)
        _mark_stage(emb_dir, emb_fp)

        anchor = perturb.IDENTITY_ANCHORS[kind]
        if anchor not in per_level:
            anchor = sweep.levels[0]
        irc = psychometrics.assemble_irc(
            per_level, query_manifest, gallery_manifest, gallery_matrix,
            anchor_level=anchor, cfg=eval_cfg, kind=kind)
        fit = None
        thr = None
        if len(irc.points) >= 5:
            fit = psychometrics.fit_logistic(irc)
            if fit.converged and not fit.flat:
                thr = psychometrics.threshold(fit, irc.unperturbed_rank1)
        finite = [p for p in irc.points if np.isfinite(p.level)]
        auirc_norm = (psychometrics.auirc(
            psychometrics.ItemResponseCurve(kind, finite, irc.unperturbed_rank1))
            if len(finite) >= 2 else float("nan"))
        records.append(report.ExperimentRecord(
            model=model_label, dataset=dataset_label, kind=kind, irc=irc,
            fit=fit, threshold=thr, auirc_norm=auirc_norm,
            config={"sweep": sweep_fp, "emb": emb_fp, "eval": eval_cfg.similarity}))

    report.emit_all(records, root / "results")
    print(f"wrote results for {len(records)} sweeps under {root / 'results'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psyreid", description=__doc__)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int, default=None,
                   help="override config seed")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-split", help="build train/query/gallery from tracks")
    b.add_argument("track_csv")
    b.add_argument("--out", required=True)
    b.add_argument("--gallery-frac", type=float, default=0.6)
    b.add_argument("--query-frac", type=float, default=0.2)
    b.add_argument("--min-keyframes", type=int, default=5)
    b.add_argument("--min-visibility", type=int, default=3)
    b.add_argument("--bin-width", type=float, default=1.0)
    b.set_defaults(func=cmd_build_split)

    v = sub.add_parser("validate-split", help="check query/gallery manifests")
    v.add_argument("query")
    v.add_argument("gallery")
    v.add_argument("--bin-width", type=float, default=1.0)
    v.set_defaults(func=cmd_validate_split)

    s = sub.add_parser("sweep", help="materialize perturbed stimuli")
    s.add_argument("manifest")
    s.add_argument("--kind", required=True, choices=perturb.KINDS)
    s.add_argument("--levels", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--images-root", default=".")
    s.add_argument("--occluders", default=None)
    s.set_defaults(func=cmd_sweep, seed=0)
    s.add_argument("--sweep-seed", dest="seed", type=int, default=0)

    e = sub.add_parser("embed", help="run an external embedding provider")
    e.add_argument("stimuli")
    e.add_argument("--mode", choices=["file", "subprocess"], default="file")
    e.add_argument("--command", nargs="+", required=True)
    e.add_argument("--stimuli-root", default=".")
    e.add_argument("--timeout", type=float, default=300.0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    ev = sub.add_parser("eval", help="rank-1 / mAP of embeddings")
    ev.add_argument("query_emb")
    ev.add_argument("gallery_emb")
    ev.add_argument("--query-manifest", required=True)
    ev.add_argument("--gallery-manifest", required=True)
    ev.add_argument("--similarity", choices=["cosine", "euclidean"],
                    default="cosine")
    ev.add_argument("--cross-camera-filter", action="store_true")
    ev.add_argument("--per-query", default=None)
    ev.set_defaults(func=cmd_eval)

    f = sub.add_parser("fit", help="fit a logistic to points.csv")
    f.add_argument("points_csv")
    f.set_defaults(func=cmd_fit)

    pc = sub.add_parser("pose-cluster", help="k-means pose analysis")
    pc.add_argument("pose_csv")
    pc.add_argument("--k-max", type=int, default=8)
    pc.add_argument("--grid", type=int, default=32)
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=cmd_pose_cluster, seed=0)

    r = sub.add_parser("run", help="full pipeline from a YAML config")
    r.add_argument("--config", required=True)
    resume = r.add_mutually_exclusive_group()
    resume.add_argument("--resume", dest="resume", action="store_true")
    resume.add_argument("--no-resume", dest="resume", action="store_false")
    r.set_defaults(func=cmd_run, resume=True)

    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = None
    try:
        return args.func(args)
    except embed.ProviderError as e:
        log.error("provider: %s", e)
        return EXIT_PROVIDER
    except (metrics.MetricError, psychometrics.FitError) as e:
        log.error("evaluation: %s", e)
        return EXIT_EVALUATION
    except (ValidationError, dataset.ManifestError, perturb.PerturbationError,
            embed.EmbeddingError, ValueError, FileNotFoundError) as e:
        log.error("validation: %s", e)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
