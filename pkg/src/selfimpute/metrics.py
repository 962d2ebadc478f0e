"""Detection quality: point-wise P/R/F1, AUROC, AUPRC and interval matching."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .core import AnomalyInterval


@dataclass(frozen=True)
class ConfusionCounts:
    TP: int
    FP: int
    FN: int
    TN: int

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.FN + self.TN


def _flags(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return a.astype(bool)


def confusion(pred, truth) -> ConfusionCounts:
    pred, truth = _flags(pred, "pred"), _flags(truth, "truth")
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} labels")
    return ConfusionCounts(
        int(np.sum(pred & truth)),
        int(np.sum(pred & ~truth)),
        int(np.sum(~pred & truth)),
        int(np.sum(~pred & ~truth)),
    )


def prf_from_counts(c: ConfusionCounts) -> tuple:
    precision = c.TP / (c.TP + c.FP) if c.TP + c.FP else 0.0
    recall = c.TP / (c.TP + c.FN) if c.TP + c.FN else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def point_adjust(pred, truth) -> np.ndarray:
    """Mark a whole labelled segment as detected when any point inside it is."""
    pred, truth = _flags(pred, "pred").copy(), _flags(truth, "truth")
    padded = np.concatenate([[False], truth, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    for a, b in zip(edges[::2], edges[1::2]):
        if pred[a:b].any():
            pred[a:b] = True
    return pred


def point_prf(pred, truth, adjust: bool = False) -> tuple:
    """Point-wise (precision, recall, F1); an undefined ratio counts as 0."""
    if adjust:
        pred = point_adjust(pred, truth)
    return prf_from_counts(confusion(pred, truth))


def _ranked(scores, truth):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = _flags(truth, "truth")
    if scores.shape != truth.shape:
        raise ValueError(f"length mismatch: {scores.size} scores vs {truth.size} labels")
    order = np.argsort(-scores, kind="mergesort")
    scores, truth = scores[order], truth[order]
    # one threshold step per distinct score value
    last_of_group = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    tps = np.cumsum(truth)[last_of_group]
    fps = np.cumsum(~truth)[last_of_group]
    return tps, fps, int(truth.sum()), int((~truth).sum())


def auroc(scores, truth) -> float:
    """Area under the ROC curve by a threshold sweep with trapezoidal integration."""
    tps, fps, P, N = _ranked(scores, truth)
    if P == 0 or N == 0:
        raise ValueError("degenerate labels: both classes are required")
    tpr = np.r_[0.0, tps / P]
    fpr = np.r_[0.0, fps / N]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))


def auprc(scores, truth) -> float:
    """Area under the precision-recall curve as step-wise average precision."""
    tps, fps, P, _ = _ranked(scores, truth)
    if P == 0:
        raise ValueError("no positive labels")
    precision = tps / (tps + fps)
    recall = np.r_[0.0, tps / P]
    return float(np.sum((recall[1:] - recall[:-1]) * precision))


# interval-level matching --------------------------------------------------------

@dataclass
class IntervalMatch:
    recall: float
    precision: float
    start_errors: list
    end_errors: list

    @property
    def max_boundary_error(self) -> int:
        errors = [abs(e) for e in self.start_errors + self.end_errors]
        return max(errors) if errors else 0


def match_intervals(pred: Sequence[AnomalyInterval], truth: Sequence[AnomalyInterval]) -> IntervalMatch:
    """Overlap-based interval recall/precision and signed boundary errors.

    Each true interval is paired with the overlapping detection of largest overlap.
    """
    hit = [any(p.overlaps(t) for p in pred) for t in truth]
    useful = [any(p.overlaps(t) for t in truth) for p in pred]
    starts, ends = [], []
    for t in truth:
        overlapping = [p for p in pred if p.overlaps(t)]
        if not overlapping:
            continue
        best = max(overlapping, key=lambda p: min(p.end, t.end) - max(p.start, t.start))
        starts.append(best.start - t.start)
        ends.append(best.end - t.end)
    recall = sum(hit) / len(truth) if truth else 0.0
    precision = sum(useful) / len(pred) if pred else 0.0
    return IntervalMatch(recall, precision, starts, ends)


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auroc: Optional[float]
    auprc: Optional[float]
    counts: ConfusionCounts
    interval_precision: Optional[float] = None
    interval_recall: Optional[float] = None
    adjusted: Optional[dict] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["counts"] = asdict(self.counts)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate(pred, truth, scores=None, pred_intervals=None, truth_intervals=None,
             point_adjusted: bool = False) -> MetricsReport:
    """Point-wise report, threshold-free areas when ``scores`` are given, interval scores when possible."""
    counts = confusion(pred, truth)
    precision, recall, f1 = prf_from_counts(counts)
    roc = prc = None
    truth_flags = _flags(truth, "truth")
    if scores is not None and 0 < truth_flags.sum() < truth_flags.size:
        roc, prc = auroc(scores, truth_flags), auprc(scores, truth_flags)
    report = MetricsReport(precision, recall, f1, roc, prc, counts)
    if pred_intervals is not None and truth_intervals is not None:
        m = match_intervals(pred_intervals, truth_intervals)
        report.interval_precision, report.interval_recall = m.precision, m.recall
    if point_adjusted:
        p, r, f = point_prf(pred, truth, adjust=True)
        report.adjusted = {"precision": p, "recall": r, "f1": f}
    return report
