"""Item-response curves, logistic least-squares fitting, thresholds, AUIRC.

The fitted model is y(x) = c / (1 + exp(-k * (x - x0))) + y0, minimized by
damped Gauss-Newton (Levenberg-Marquardt) with an analytic Jacobian. The
parameterization is not identifiable under sign flips of (c, k), so curve
comparisons are made on model values and threshold crossings, never on raw
parameters.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import EvalConfig, evaluate

MAX_ITERATIONS = 500
RSS_RTOL = 1e-10
STEP_TOL = 1e-12
LAMBDA_INIT = 1e-3
FLAT_RANGE = 1e-6


class FitError(ValueError):
    pass


@dataclass
class IrcPoint:
    level: float
    rank1: float
    map: float
    n_queries: int


@dataclass
class ItemResponseCurve:
    kind: str
    points: list[IrcPoint]
    unperturbed_rank1: float

    def __post_init__(self):
        levels = [p.level for p in self.points]
        diffs = np.diff(levels)
        if len(levels) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise FitError("curve levels must be strictly monotone")

    def levels(self) -> np.ndarray:
        return np.array([p.level for p in self.points], dtype=np.float64)

    def rank1s(self) -> np.ndarray:
        return np.array([p.rank1 for p in self.points], dtype=np.float64)


def assemble_irc(per_level_query: dict[float, "EmbeddingMatrix"],
                 query_manifest, gallery_manifest, gallery_matrix,
                 anchor_level: float,
                 cfg: EvalConfig | None = None,
                 kind: str = "") -> ItemResponseCurve:
    """Score each stimulus level against the unperturbed gallery.

    Every level's matrix must cover the same query id set; the gallery is
    embedded once from unperturbed images.
    """
    if anchor_level not in per_level_query:
        raise FitError(f"anchor level {anchor_level} missing from sweep results")
    id_sets = {lv: set(m.ids) for lv, m in per_level_query.items()}
    ref = id_sets[anchor_level]
    for lv, ids in id_sets.items():
        if ids != ref:
            raise FitError(f"query coverage mismatch at level {lv}")
    covered = [r for r in query_manifest.records if r.image_id in ref]
    from .dataset import Manifest
    sub_manifest = Manifest(split="query", records=covered,
                            source=query_manifest.source)
    points = []
    for lv in sorted(per_level_query):
        res = evaluate(sub_manifest, per_level_query[lv], gallery_manifest,
                       gallery_matrix, cfg)
        points.append(IrcPoint(level=lv, rank1=res.rank1, map=res.mean_ap,
                               n_queries=res.n_evaluable))
    anchor_rank1 = next(p.rank1 for p in points if p.level == anchor_level)
    return ItemResponseCurve(kind=kind, points=points,
                             unperturbed_rank1=anchor_rank1)


@dataclass
class LogisticFit:
    c: float
    k: float
    x0: float
    y0: float
    rss: float
    converged: bool
    iterations: int
    flat: bool = False

    def model(self, x) -> np.ndarray:
        return logistic(np.asarray(x, dtype=np.float64),
                        self.c, self.k, self.x0, self.y0)


def logistic(x: np.ndarray, c: float, k: float, x0: float, y0: float) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-k * (x - x0)))
    return c * s + y0


def _jacobian(x: np.ndarray, c: float, k: float, x0: float, y0: float) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-k * (x - x0)))
    ds = s * (1.0 - s)
    J = np.empty((len(x), 4))
    J[:, 0] = s
    J[:, 1] = c * ds * (x - x0)
    J[:, 2] = -c * k * ds
    J[:, 3] = 1.0
    return J


def _initial_guess(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    y0 = float(np.min(y))
    c = float(np.max(y) - np.min(y))
    mid = (np.max(y) + np.min(y)) / 2.0
    x0 = float(x[np.argmin(np.abs(y - mid))])
    slope = (y[-1] - y[0]) / (x[-1] - x[0]) if x[-1] != x[0] else 1.0
    k = 1.0 if slope >= 0 else -1.0
    return np.array([c, k, x0, y0])


def fit_logistic(irc_or_x, y=None) -> LogisticFit:
    """Least-squares logistic fit of (level, rank1) points.

    Accepts an ItemResponseCurve or raw (x, y) arrays. Requires at least 5
    points. Non-convergence is reported via the converged flag, never raised.
    """
    if y is None:
        x = irc_or_x.levels()
        y = irc_or_x.rank1s()
    else:
        x = np.asarray(irc_or_x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
    if len(x) < 5:
        raise FitError(f"need >= 5 points, got {len(x)}")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise FitError("non-finite fit inputs")
    order = np.argsort(x)
    x, y = x[order], y[order]

    if np.max(y) - np.min(y) < FLAT_RANGE:
        y0 = float(np.mean(y))
        rss = float(np.sum((y - y0) ** 2))
        return LogisticFit(c=0.0, k=0.0, x0=float(np.median(x)), y0=y0,
                           rss=rss, converged=True, iterations=0, flat=True)

    p = _initial_guess(x, y)
    r = y - logistic(x, *p)
    rss = float(r @ r)
    rss_init = rss
    lam = LAMBDA_INIT
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        J = _jacobian(x, *p)
        JtJ = J.T @ J
        g = J.T @ r
        diag = np.diag(JtJ).copy()
        diag[diag < 1e-12] = 1e-12
        try:
            step = np.linalg.solve(JtJ + lam * np.diag(diag), g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        p_new = p + step
        r_new = y - logistic(x, *p_new)
        rss_new = float(r_new @ r_new)
        if rss_new <= rss:
            rel = (rss - rss_new) / max(rss, 1e-300)
            p, r, rss = p_new, r_new, rss_new
            lam *= 0.1
            if rel < RSS_RTOL or np.linalg.norm(step) < STEP_TOL:
                converged = True
                break
        else:
            lam *= 10
            if np.linalg.norm(step) < STEP_TOL:
                converged = True
                break
    assert rss <= rss_init + 1e-15
    return LogisticFit(c=float(p[0]), k=float(p[1]), x0=float(p[2]),
                       y0=float(p[3]), rss=rss, converged=converged,
                       iterations=iterations)


@dataclass
class ThresholdResult:
    value: float | None
    reason: str = ""

    @property
    def defined(self) -> bool:
        return self.value is not None


def threshold(fit: LogisticFit, unperturbed: float) -> ThresholdResult:
    """Stimulus level where the fitted curve crosses half the unperturbed level.

    Solved analytically: x = x0 - (1/k) * ln(c / (t - y0) - 1) with
    t = unperturbed / 2. Undefined when the half-performance line never
    crosses the fitted curve.
    """
    if not fit.converged:
        raise FitError("threshold requires a converged fit")
    t = unperturbed / 2.0
    if fit.k == 0 or fit.c == 0:
        return ThresholdResult(None, "flat fit")
    u = (t - fit.y0) / fit.c
    if not 0 < u < 1:
        if fit.c > 0 and t - fit.y0 <= 0:
            return ThresholdResult(None, "asymptote above half-performance")
        return ThresholdResult(None, "half-performance line misses the curve")
    x = fit.x0 - (1.0 / fit.k) * math.log(1.0 / u - 1.0)
    return ThresholdResult(float(x))


def auirc(irc: ItemResponseCurve, normalize: bool = True) -> float:
    """Trapezoidal area under the rank-1 item-response curve.

    Bound-dependent by construction: the result depends on the level range
    the experimenter chose. Normalization divides by that range.
    """
    if len(irc.points) < 2:
        raise FitError("auirc requires >= 2 points")
    x = irc.levels()
    y = irc.rank1s()
    order = np.argsort(x)
    x, y = x[order], y[order]
    area = float(np.trapezoid(y, x))
    if normalize:
        area /= float(x[-1] - x[0])
    return area


FIT_CSV_COLUMNS = ["kind", "model", "c", "k", "x0", "y0", "rss", "converged",
                   "threshold", "auirc_norm", "unperturbed_rank1"]


def write_fit_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=FIT_CSV_COLUMNS)
        w.writeheader()
        w.writerows(rows)
