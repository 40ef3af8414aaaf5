"""Discrimination and calibration metrics, report tables, reliability plots.

Undefined metrics (single-class sets, zero denominators, empty bins) are
``None`` in Python and ``--`` in written files; they are never coerced to 0.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata

UNDEFINED = "--"
RESULT_COLUMNS = ["model", "target", "resolution", "task_mode", "seed", "prevalence", "auroc", "auprc",
                  "f1", "tpr", "tnr", "ppv", "npv"]


class MetricConfigError(ValueError):
    pass


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise ValueError("empty scored set")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return s, y.astype(np.int64)


def auroc(scores, labels) -> Optional[float]:
    """Mann-Whitney AUROC with half credit for ties; None without both classes."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)  # average ranks for ties
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, labels) -> Optional[float]:
    """Step-wise average precision over descending distinct thresholds."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of each run of equal scores
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _ratio(a, b) -> Optional[float]:
    return float(a / b) if b > 0 else None


def confusion_at(scores, labels, threshold: float = 0.5) -> dict:
    s, y = _check(scores, labels)
    pred = s >= threshold
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())
    tn = int((~pred & (y == 0)).sum())
    return {
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
        "tpr": _ratio(tp, tp + fn),
        "tnr": _ratio(tn, tn + fp),
        "ppv": _ratio(tp, tp + fp),
        "npv": _ratio(tn, tn + fn),
    }


@dataclass(frozen=True)
class CalibrationBin:
    low: float
    high: float
    mean_predicted: Optional[float]
    observed: Optional[float]
    count: int


def calibration_curve(scores, labels, n_bins: int = 10) -> list[CalibrationBin]:
    """Equal-width bins on [0, 1]; a score of exactly 1 falls in the last bin."""
    if n_bins < 2:
        raise MetricConfigError(f"n_bins must be at least 2, got {n_bins}")
    s, y = _check(scores, labels)
    if s.min() < 0 or s.max() > 1:
        raise ValueError("calibration needs probabilities in [0, 1]")
    idx = np.minimum((s * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    psum = np.bincount(idx, weights=s, minlength=n_bins)
    ysum = np.bincount(idx, weights=y, minlength=n_bins)
    out = []
    for b in range(n_bins):
        c = int(counts[b])
        out.append(CalibrationBin(b / n_bins, (b + 1) / n_bins,
                                  float(psum[b] / c) if c else None,
                                  float(ysum[b] / c) if c else None, c))
    return out


def max_calibration_gap(bins: list[CalibrationBin]) -> float:
    gaps = [abs(b.mean_predicted - b.observed) for b in bins if b.count]
    return max(gaps) if gaps else 0.0


def bins_below_diagonal(bins: list[CalibrationBin]) -> tuple[int, int]:
    """(occupied bins with observed rate below mean prediction, occupied bins)."""
    occ = [b for b in bins if b.count]
    return sum(b.observed < b.mean_predicted for b in occ), len(occ)


@dataclass
class MetricsReport:
    n: int
    prevalence: float
    auroc: Optional[float]
    auprc: Optional[float]
    f1: Optional[float]
    tpr: Optional[float]
    tnr: Optional[float]
    ppv: Optional[float]
    npv: Optional[float]
    calibration: list = field(default_factory=list)


def evaluate(scores, labels, threshold: float = 0.5, n_bins: int = 10) -> MetricsReport:
    s, y = _check(scores, labels)
    cm = confusion_at(s, y, threshold)
    return MetricsReport(
        n=int(s.size), prevalence=float(y.mean()), auroc=auroc(s, y), auprc=auprc(s, y),
        f1=cm["f1"], tpr=cm["tpr"], tnr=cm["tnr"], ppv=cm["ppv"], npv=cm["npv"],
        calibration=calibration_curve(s, y, n_bins),
    )


# ---------------------------------------------------------------------------
# file output


def fmt(value) -> str:
    if value is None:
        return UNDEFINED
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6f}"
    return str(value)


def _write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def result_row(model, target, resolution, task_mode, seed, report: MetricsReport | None) -> list:
    if report is None:
        return [model, target, resolution, task_mode, seed] + ["absent"] * 8
    return [model, target, resolution, task_mode, seed, report.prevalence, report.auroc, report.auprc,
            report.f1, report.tpr, report.tnr, report.ppv, report.npv]


def write_results(path, rows) -> Path:
    rows = sorted(rows, key=lambda r: tuple(str(v) for v in r[:5]))
    return _write_csv(path, RESULT_COLUMNS, rows)


def write_calibration(path, bins: list[CalibrationBin]) -> Path:
    return _write_csv(path, ["bin", "low", "high", "mean_predicted", "observed", "count"],
                      [[i, b.low, b.high, b.mean_predicted, b.observed, b.count] for i, b in enumerate(bins)])


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def calibration_svg(path, curves: dict[str, list[CalibrationBin]], title: str = "") -> Path:
    """Reliability diagram: predicted on x, observed on y, one polyline per model."""
    W, H, pad = 360, 360, 40
    span = W - 2 * pad

    def xy(p, o):
        return pad + p * span, H - pad - o * span

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H + 20 * len(curves)}" '
             f'font-family="sans-serif" font-size="11">',
             f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#888"/>',
             f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{pad}" stroke="#aaa" stroke-dasharray="4 3"/>',
             f'<text x="{W / 2}" y="{pad - 12}" text-anchor="middle">{title}</text>',
             f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle">mean predicted probability</text>',
             f'<text x="12" y="{H / 2}" transform="rotate(-90 12 {H / 2})" text-anchor="middle">observed rate</text>']
    for k, (name, bins) in enumerate(sorted(curves.items())):
        colour = PALETTE[k % len(PALETTE)]
        pts = [xy(b.mean_predicted, b.observed) for b in bins if b.count]
        if pts:
            parts.append('<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>'.format(
                colour, " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)))
            parts += [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{colour}"/>' for x, y in pts]
        parts.append(f'<text x="{pad}" y="{H + 14 + 20 * k}" fill="{colour}">{name}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path


def stl_mtl_deltas(rows) -> list[list]:
    """AUROC(MTL) - AUROC(STL) per (model, resolution, target, MTL mode)."""
    idx = {c: i for i, c in enumerate(RESULT_COLUMNS)}
    stl = {}
    for r in rows:
        if r[idx["task_mode"]] == "stl":
            stl[(r[idx["model"]], r[idx["resolution"]], r[idx["target"]])] = r[idx["auroc"]]
    out = []
    for r in rows:
        mode = r[idx["task_mode"]]
        if mode == "stl":
            continue
        key = (r[idx["model"]], r[idx["resolution"]], r[idx["target"]])
        if key not in stl:
            continue
        a, b = stl[key], r[idx["auroc"]]
        ok = isinstance(a, float) and isinstance(b, float)
        out.append([key[0], key[1], key[2], mode, a, b, (b - a) if ok else None])
    out.sort(key=lambda r: tuple(str(v) for v in r[:4]))
    return out


DELTA_COLUMNS = ["model", "resolution", "target", "mtl_mode", "stl_auroc", "mtl_auroc", "delta_auroc"]


def write_deltas(path, rows) -> Path:
    return _write_csv(path, DELTA_COLUMNS, rows)
