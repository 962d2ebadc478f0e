"""Anomaly scores: per-timestep residuals, per-window DTW, and threshold calibration."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .core import TimeSeries, window_starts
from .imputer import (
    BIDIRECTIONAL,
    RECONSTRUCTION,
    ImputerModel,
    bidirectional_batch,
    run_padded,
)
from .masking import SENTINEL, make_sequence_masks

POINT = "point"
SEQUENCE = "sequence"


def residual_score(x, x_hat) -> float:
    """Sum over variates of the absolute imputation error at one timestep."""
    x = np.asarray(x, dtype=np.float64).ravel()
    x_hat = np.asarray(x_hat, dtype=np.float64).ravel()
    if x.shape != x_hat.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_hat.shape}")
    return float(np.abs(x_hat - x).sum())


def residual_scores(x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    """Vectorised :func:`residual_score` over the columns of (d, T) arrays."""
    return np.abs(np.asarray(x_hat) - np.asarray(x)).sum(axis=0)


def _as_steps(a) -> np.ndarray:
    """(d, m) or 1-D input -> (m, d) rows of timestep vectors."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    return a.T


def dtw_distance(a, b) -> float:
    """Unconstrained DTW between (d, m) and (d, n) sequences with L1 local cost."""
    a, b = _as_steps(a), _as_steps(b)
    m, n = len(a), len(b)
    if m == 0 or n == 0:
        raise ValueError("empty sequence")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sequences must have the same number of variates")
    cost = np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2).tolist()
    prev = [0.0] * n
    acc = 0.0
    for j in range(n):
        acc += cost[0][j]
        prev[j] = acc
    for i in range(1, m):
        ci = cost[i]
        row = [0.0] * n
        left = prev[0] + ci[0]
        row[0] = left
        for j in range(1, n):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if left < best:
                best = left
            left = ci[j] + best
            row[j] = left
        prev = row
    return float(prev[-1])


def threshold_from_scores(scores: Iterable) -> float:
    """Largest score seen on clean validation data."""
    values = [np.max(np.asarray(s)) for s in scores if np.size(s)]
    if not values:
        raise ValueError("empty validation scores")
    return float(max(values))


@dataclass
class AnomalyScoreTrace:
    mode: str
    scores: np.ndarray
    threshold: float
    windows: List[tuple] = field(default_factory=list)  # (start, end) per window score

    @property
    def flags(self) -> np.ndarray:
        return self.scores > self.threshold

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            if self.mode == POINT:
                writer.writerow(["t", "score", "threshold", "flag"])
                for t, s in enumerate(self.scores):
                    writer.writerow([t, repr(float(s)), repr(self.threshold), int(s > self.threshold)])
            else:
                writer.writerow(["window_start", "window_end", "dtw", "threshold", "flag"])
                for (a, b), s in zip(self.windows, self.scores):
                    writer.writerow([a, b, repr(float(s)), repr(self.threshold), int(s > self.threshold)])

    @classmethod
    def from_csv(cls, path) -> "AnomalyScoreTrace":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"no scores in {path}")
        if "t" in rows[0]:
            scores = np.array([float(r["score"]) for r in rows])
            return cls(POINT, scores, float(rows[0]["threshold"]))
        scores = np.array([float(r["dtw"]) for r in rows])
        windows = [(int(r["window_start"]), int(r["window_end"])) for r in rows]
        return cls(SEQUENCE, scores, float(rows[0]["threshold"]), windows)


# point scores ----------------------------------------------------------------

def point_residuals(
    x: TimeSeries,
    model: ImputerModel,
    period: int = 4,
    excluded: Optional[np.ndarray] = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Per-timestep residual scores ``e_t`` from point imputation.

    Every window is imputed ``period`` times; pass ``r`` masks all variates of
    the timesteps ``t = r (mod period)``. Windows overlap by half and each
    timestep takes its score from the window where it sits most centrally.
    Timesteps in ``excluded`` are also blanked whenever they appear as context.
    """
    if model.head != RECONSTRUCTION:
        raise ValueError(f"point scoring needs a {RECONSTRUCTION!r} model, got {model.head!r}")
    n = min(model.window, x.T)
    period = max(1, min(period, n))
    starts = window_starts(x.T, n, max(1, n // 2))
    excluded = np.zeros(x.T, dtype=bool) if excluded is None else np.asarray(excluded, dtype=bool)
    inputs, masks = [], []
    for s in starts:
        w = x.values[:, s:s + n]
        skip = excluded[s:s + n]
        for r in range(period):
            cols = np.zeros(n, dtype=bool)
            cols[r::period] = True
            blank = cols | skip
            inputs.append(np.where(blank[None, :], SENTINEL, w))
            masks.append(cols)
    inputs = np.asarray(inputs)
    outputs = np.concatenate([
        run_padded(model, "main", inputs[i:i + batch_size]).value
        for i in range(0, len(inputs), batch_size)
    ])
    centrality = np.abs(np.arange(n) - (n - 1) / 2)
    best = np.full(x.T, np.inf)
    scores = np.zeros(x.T)
    for k, s in enumerate(starts):
        block = outputs[k * period:(k + 1) * period]
        cols = np.asarray(masks[k * period:(k + 1) * period])
        x_hat = (block * cols[:, None, :]).sum(axis=0)
        e = residual_scores(x.values[:, s:s + n], x_hat)
        closer = centrality < best[s:s + n]
        best[s:s + n] = np.where(closer, centrality, best[s:s + n])
        scores[s:s + n] = np.where(closer, e, scores[s:s + n])
    return scores


def score_peaks(scores: np.ndarray, threshold: float, radius: int) -> np.ndarray:
    """Flagged timesteps whose score is the largest among flagged steps within ``radius``."""
    flagged = np.flatnonzero(scores > threshold)
    peaks = np.zeros(len(scores), dtype=bool)
    for t in flagged:
        near = flagged[np.abs(flagged - t) <= radius]
        if scores[t] >= scores[near].max():
            peaks[t] = True
    return peaks


def refined_point_residuals(
    x: TimeSeries,
    model: ImputerModel,
    threshold: float,
    period: int = 4,
    radius: Optional[int] = None,
    max_rounds: int = 5,
) -> np.ndarray:
    """Point residuals re-scored with the local score peaks removed from the context.

    A large outlier leaks into the imputation of its neighbours. Peaks above
    ``threshold`` are blanked as context and all scores recomputed, repeating
    until the set of peaks stops growing.
    """
    radius = model.kernel * 2 if radius is None else radius
    scores = point_residuals(x, model, period)
    excluded = score_peaks(scores, threshold, radius)
    for _ in range(max_rounds):
        if not excluded.any():
            break
        scores = point_residuals(x, model, period, excluded)
        grown = excluded | score_peaks(scores, threshold, radius)
        if np.array_equal(grown, excluded):
            break
        excluded = grown
    return scores


# sequence scores ---------------------------------------------------------------

TRAILING = "trailing"
FULL = "full"


def window_imputations(
    x: TimeSeries,
    model: ImputerModel,
    starts: Sequence[int],
    length: int,
    stripe: int,
    scheme: str = FULL,
    segments: int = 8,
    batch_size: int = 256,
) -> np.ndarray:
    """Imputed copies of the windows ``x[:, s:s+length]``, shape (len(starts), d, length).

    ``trailing`` forecasts only the last ``stripe`` steps from the left context;
    ``full`` masks each of ``segments`` consecutive segments in turn and stitches
    the blended bidirectional imputations into a complete reconstruction.
    """
    if model.head != BIDIRECTIONAL:
        raise ValueError(f"sequence scoring needs a {BIDIRECTIONAL!r} model, got {model.head!r}")
    windows = np.stack([x.values[:, s:s + length] for s in starts])
    if scheme == TRAILING:
        gaps_per_window = [(max(0, length - stripe), length)] if stripe < length else [(length // 2, length)]
    elif scheme == FULL:
        gaps_per_window = list(make_sequence_masks(length, min(segments, length)).segments)
    else:
        raise ValueError(f"unknown inference scheme {scheme!r}")
    jobs = [(k, gap) for k in range(len(starts)) for gap in gaps_per_window]
    result = windows.copy()
    for i in range(0, len(jobs), batch_size):
        chunk = jobs[i:i + batch_size]
        out = bidirectional_batch(model, windows[[k for k, _ in chunk]], [g for _, g in chunk]).value
        for (k, (a, b)), o in zip(chunk, out):
            result[k, :, a:b] = o[:, a:b]
    return result


class WindowScorer:
    """Memoised DTW score of the window starting at a given timestep."""

    def __init__(self, x: TimeSeries, model: ImputerModel, length: int, stripe: int,
                 scheme: str = FULL, segments: Optional[int] = None,
                 distance: Callable = dtw_distance):
        self.x = x
        self.model = model
        self.length = min(length, x.T)
        self.stripe = stripe
        self.scheme = scheme
        self.segments = segments or max(1, self.length // stripe)
        self.distance = distance
        self.cache: Dict[int, float] = {}

    def valid(self, start: int) -> bool:
        return 0 <= start and start + self.length <= self.x.T

    def prefetch(self, starts: Iterable[int]) -> None:
        todo = sorted({s for s in starts if s not in self.cache and self.valid(s)})
        if not todo:
            return
        imputed = window_imputations(self.x, self.model, todo, self.length, self.stripe,
                                     self.scheme, self.segments)
        for s, w in zip(todo, imputed):
            self.cache[s] = self.distance(self.x.values[:, s:s + self.length], w)

    def __call__(self, start: int) -> float:
        if start not in self.cache:
            if not self.valid(start):
                raise IndexError(f"window at {start} falls outside the series")
            self.prefetch([start])
        return self.cache[start]


def sequence_residuals(x: TimeSeries, model: ImputerModel, length: int, stripe: int,
                       segments: Optional[int] = None) -> np.ndarray:
    """Per-timestep residuals from full bidirectional reconstruction (the no-DTW ablation)."""
    n = min(length, x.T)
    starts = window_starts(x.T, n, max(1, n // 2))
    imputed = window_imputations(x, model, starts, n, stripe, FULL, segments or max(1, n // stripe))
    centrality = np.abs(np.arange(n) - (n - 1) / 2)
    best = np.full(x.T, np.inf)
    scores = np.zeros(x.T)
    for s, w in zip(starts, imputed):
        e = residual_scores(x.values[:, s:s + n], w)
        closer = centrality < best[s:s + n]
        best[s:s + n] = np.where(closer, centrality, best[s:s + n])
        scores[s:s + n] = np.where(closer, e, scores[s:s + n])
    return scores


def calibrate_threshold(model: ImputerModel, validation: Sequence[TimeSeries], mode: str,
                        window: int = 64, stride: int = 8, period: int = 4,
                        scheme: str = FULL, segments: Optional[int] = None) -> float:
    """Maximum anomaly score over (assumed clean) validation series."""
    if not validation:
        raise ValueError("empty validation set")
    if mode == POINT:
        return threshold_from_scores(point_residuals(v, model, period) for v in validation)
    if mode != SEQUENCE:
        raise ValueError(f"unknown mode {mode!r}")
    scores = []
    for v in validation:
        scorer = WindowScorer(v, model, window, stride, scheme, segments)
        starts = window_starts(v.T, scorer.length, min(stride, scorer.length))
        scorer.prefetch(starts)
        scores.append([scorer(s) for s in starts])
    return threshold_from_scores(scores)
