"""Machine-readable result files and item-response-curve figures.

Output layout per (dataset, sweep kind): points.csv with the raw per-level
metrics, fits.csv with fitted parameters and derived summaries, and
curve.svg with raw points as markers and converged fits as smooth lines.
SVG output is deterministic: fixed hash salt, no embedded timestamps.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .psychometrics import (FIT_CSV_COLUMNS, ItemResponseCurve, LogisticFit,  # noqa: E402
                            ThresholdResult, write_fit_csv)

# Okabe-Ito colorblind-safe palette
PALETTE = ["#0072B2", "#E69F00", "#009E73", "#D55E00",
           "#CC79A7", "#56B4E9", "#F0E442", "#000000"]

AXIS_LABELS = {
    "gaussian_blur": "blur sigma (px)",
    "occlude_bottom": "proportion occluded (bottom-up)",
    "occlude_left": "proportion occluded (left-to-right)",
    "occlude_repeat": "proportion occluded (repeat padding)",
    "occlude_voc": "proportion of pedestrian occluded",
    "partial_detection": "proportion cropped before reshaping",
    "jpeg": "JPEG quality",
    "translate": "translation (fraction of width)",
    "scale": "scale factor",
    "rain": "rain inverse density",
    "snow": "snow density",
    "identity": "level",
}


class ReportError(ValueError):
    pass


@dataclass
class ExperimentRecord:
    model: str
    dataset: str
    kind: str
    irc: ItemResponseCurve
    fit: LogisticFit | None
    threshold: ThresholdResult | None
    auirc_norm: float
    config: dict

    def fingerprint(self) -> str:
        return config_fingerprint(self.config)


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def emit_csv(records: list[ExperimentRecord], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "points.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["kind", "model", "level", "rank1", "map", "n_queries"])
        for rec in records:
            for p in rec.irc.points:
                w.writerow([rec.kind, rec.model, repr(p.level), repr(p.rank1),
                            repr(p.map), p.n_queries])
    rows = []
    for rec in records:
        fit = rec.fit
        thr = rec.threshold
        rows.append({
            "kind": rec.kind, "model": rec.model,
            "c": repr(fit.c) if fit else "",
            "k": repr(fit.k) if fit else "",
            "x0": repr(fit.x0) if fit else "",
            "y0": repr(fit.y0) if fit else "",
            "rss": repr(fit.rss) if fit else "",
            "converged": fit.converged if fit else False,
            "threshold": repr(thr.value) if thr and thr.defined else "",
            "auirc_norm": repr(rec.auirc_norm),
            "unperturbed_rank1": repr(rec.irc.unperturbed_rank1),
        })
    write_fit_csv(rows, out_dir / "fits.csv")


def emit_plot(records: list[ExperimentRecord], out_path: str | Path) -> None:
    """One figure per sweep kind: marker series per model, line for each fit."""
    kinds = {r.kind for r in records}
    if len(kinds) != 1:
        raise ReportError(f"mixed sweep kinds in one plot: {sorted(kinds)}")
    kind = kinds.pop()

    with plt.rc_context({"svg.hashsalt": "psyreid", "svg.fonttype": "path"}):
        import numpy as np
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for i, rec in enumerate(records):
            color = PALETTE[i % len(PALETTE)]
            x = rec.irc.levels()
            y = rec.irc.rank1s()
            finite = np.isfinite(x)
            label = rec.model
            if rec.fit is not None and rec.fit.converged and not rec.fit.flat:
                xs = np.linspace(x[finite].min(), x[finite].max(), 200)
                ax.plot(xs, rec.fit.model(xs), color=color, linewidth=1.5)
                if rec.threshold is not None and rec.threshold.defined:
                    label += f" (thr={rec.threshold.value:.3g})"
            else:
                label += " (no fit)"
            ax.plot(x[finite], y[finite], linestyle="none", marker="o",
                    markersize=4, color=color, label=label)
        ax.set_xlabel(AXIS_LABELS.get(kind, "stimulus level"))
        ax.set_ylabel("rank-1 accuracy")
        ax.set_ylim(-0.05, 1.05)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit_all(records: list[ExperimentRecord], results_root: str | Path) -> list[Path]:
    """Write results/<dataset>/<kind>/{points.csv,fits.csv,curve.svg}."""
    results_root = Path(results_root)
    written = []
    groups: dict[tuple[str, str], list[ExperimentRecord]] = {}
    for rec in records:
        groups.setdefault((rec.dataset, rec.kind), []).append(rec)
    for (dataset, kind), group in sorted(groups.items()):
        out_dir = results_root / dataset / kind
        out_dir.mkdir(parents=True, exist_ok=True)
        emit_csv(group, out_dir)
        emit_plot(group, out_dir / "curve.svg")
        written.append(out_dir)
    return written
