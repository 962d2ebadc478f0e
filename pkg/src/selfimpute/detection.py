"""Sliding-window inference, point flagging and sequence-anomaly localisation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .core import AnomalyInterval, TimeSeries, window_starts
from .imputer import BIDIRECTIONAL, RECONSTRUCTION, ImputerModel
from .scoring import (
    FULL,
    POINT,
    SEQUENCE,
    AnomalyScoreTrace,
    WindowScorer,
    point_residuals,
    refined_point_residuals,
    sequence_residuals,
)


@dataclass
class DetectionConfig:
    window: int = 64
    stride: int = 8
    mode: str = SEQUENCE
    localize: bool = True
    scoring: str = "dtw"  # or "residual": point-wise residuals, no windows
    scheme: str = FULL  # which cells of a window are imputed before scoring
    segments: Optional[int] = None
    period: int = 4  # point mode: every period-th timestep is masked per pass
    refine: bool = True  # point mode: re-score with outlier peaks removed from context

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ValueError("window and stride must be >= 1")
        if self.stride > self.window:
            raise ValueError("stride must not exceed window length")
        if self.mode not in (POINT, SEQUENCE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.scoring not in ("dtw", "residual"):
            raise ValueError(f"unknown scoring {self.scoring!r}")


@dataclass
class LocalizationState:
    """Book-keeping for one backward shift scan."""

    active_start: int
    buffer: List[int]  # candidate timesteps that may hold the boundary
    shift_scores: List[float] = field(default_factory=list)
    flag: bool = False


def _require(model: ImputerModel, head: str) -> None:
    if model.head != head:
        raise ValueError(f"model head is {model.head!r}, this detector needs {head!r}")


def runs(flags: np.ndarray, scores: Optional[np.ndarray] = None) -> List[AnomalyInterval]:
    """Maximal runs of True as inclusive intervals."""
    flags = np.asarray(flags, dtype=bool)
    padded = np.concatenate([[False], flags, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    out = []
    for a, b in zip(edges[::2], edges[1::2]):
        peak = float(scores[a:b].max()) if scores is not None else 0.0
        out.append(AnomalyInterval(int(a), int(b - 1), peak))
    return out


def merge_intervals(intervals: Sequence[AnomalyInterval], gap: int = 1) -> List[AnomalyInterval]:
    """Merge intervals that overlap or are separated by fewer than ``gap`` timesteps."""
    out: List[AnomalyInterval] = []
    for iv in sorted(intervals, key=lambda i: (i.start, i.end)):
        if out and iv.start - out[-1].end - 1 < gap:
            last = out.pop()
            iv = AnomalyInterval(last.start, max(last.end, iv.end), max(last.score, iv.score))
        out.append(iv)
    return out


def intervals_to_flags(intervals: Sequence[AnomalyInterval], T: int) -> np.ndarray:
    flags = np.zeros(T, dtype=bool)
    for iv in intervals:
        flags[iv.start:iv.end + 1] = True
    return flags


# point mode ------------------------------------------------------------------

def point_scores(x: TimeSeries, model: ImputerModel, threshold: float,
                 cfg: Optional[DetectionConfig] = None) -> np.ndarray:
    cfg = cfg or DetectionConfig(mode=POINT)
    _require(model, RECONSTRUCTION)
    if cfg.refine:
        return refined_point_residuals(x, model, threshold, cfg.period)
    return point_residuals(x, model, cfg.period)


def flag_points(scores: np.ndarray, threshold: float) -> List[AnomalyInterval]:
    return [AnomalyInterval(int(t), int(t), float(scores[t]))
            for t in np.flatnonzero(np.asarray(scores) > threshold)]


def detect_points(x: TimeSeries, model: ImputerModel, threshold: float,
                  cfg: Optional[DetectionConfig] = None) -> List[AnomalyInterval]:
    """Length-1 intervals at every timestep whose residual score exceeds ``threshold``."""
    return flag_points(point_scores(x, model, threshold, cfg), threshold)


# sequence mode -----------------------------------------------------------------

def localize_start(state: LocalizationState, threshold: float, scorer: WindowScorer) -> int:
    """Onset of an anomaly inside the candidate stripe ``state.buffer``.

    Shift ``i`` (1-based) scores the window that ends just before
    ``buffer[i - 1]``; the onset is ``buffer[i - 1]`` for the largest ``i``
    whose window is still below ``threshold``.
    """
    n = scorer.length
    first = state.buffer[0]
    state.shift_scores = []
    best = None
    for i in range(1, len(state.buffer) + 1):
        s = first - n + i - 1
        if not scorer.valid(s):
            state.shift_scores.append(float("nan"))
            continue
        e = scorer(s)
        state.shift_scores.append(e)
        if e < threshold:
            best = i
    state.flag = True
    return state.buffer[0] if best is None else state.buffer[best - 1]


def localize_end(state: LocalizationState, threshold: float, scorer: WindowScorer) -> int:
    """Last anomalous timestep inside the candidate stripe ``state.buffer``.

    The window is shifted back one step at a time so that it starts on
    ``buffer[-1]``, ``buffer[-2]``, ...; the first start whose window exceeds
    ``threshold`` is the end of the anomaly.
    """
    state.shift_scores = []
    for t in reversed(state.buffer):
        e = scorer(t)
        state.shift_scores.append(e)
        if e > threshold:
            state.flag = False
            return t
    state.flag = False
    return state.buffer[0]


def sequence_window_trace(x: TimeSeries, model: ImputerModel, threshold: float,
                          cfg: DetectionConfig) -> tuple:
    scorer = WindowScorer(x, model, cfg.window, cfg.stride, cfg.scheme, cfg.segments)
    starts = window_starts(x.T, scorer.length, min(cfg.stride, scorer.length))
    scorer.prefetch(starts)
    scores = np.array([scorer(s) for s in starts])
    windows = [(s, s + scorer.length - 1) for s in starts]
    return scorer, starts, AnomalyScoreTrace(SEQUENCE, scores, threshold, windows)


def detect_sequences(x: TimeSeries, model: ImputerModel, threshold: float,
                     cfg: Optional[DetectionConfig] = None) -> List[AnomalyInterval]:
    return detect_sequences_traced(x, model, threshold, cfg)[0]


def detect_sequences_traced(x: TimeSeries, model: ImputerModel, threshold: float,
                            cfg: Optional[DetectionConfig] = None) -> tuple:
    """Sequence anomalies as merged, disjoint intervals plus the window score trace."""
    cfg = cfg or DetectionConfig()
    _require(model, BIDIRECTIONAL)
    if cfg.scoring == "residual":
        scores = sequence_residuals(x, model, cfg.window, cfg.stride, cfg.segments)
        trace = AnomalyScoreTrace(POINT, scores, threshold)
        return runs(scores > threshold, scores), trace

    scorer, starts, trace = sequence_window_trace(x, model, threshold, cfg)
    flagged = trace.scores > threshold
    windows = trace.windows

    if not cfg.localize:
        raw = [AnomalyInterval(a, b, float(s)) for (a, b), s, f in zip(windows, trace.scores, flagged) if f]
        return merge_intervals(raw, gap=1), trace

    found = []
    active = False
    start = 0
    for k, s in enumerate(starts):
        if not active and flagged[k]:
            if k == 0:
                start = s  # no clean window precedes the series head
            else:
                prev = starts[k - 1]
                stripe = list(range(prev + scorer.length, s + scorer.length))
                state = LocalizationState(s, stripe)
                start = localize_start(state, threshold, scorer)
            active = True
        elif active and not flagged[k]:
            active = False
            prev = starts[k - 1]
            stripe = list(range(max(prev, start), s))
            if not stripe:
                # the clean window s already covers the localized onset: an unconfirmed blip
                continue
            state = LocalizationState(s, stripe, flag=True)
            end = max(start, localize_end(state, threshold, scorer))
            found.append(AnomalyInterval(start, end, _peak(trace, start, end)))
    if active:
        found.append(AnomalyInterval(start, x.T - 1, _peak(trace, start, x.T - 1)))
    return merge_intervals(found, gap=cfg.stride), trace


def _peak(trace: AnomalyScoreTrace, start: int, end: int) -> float:
    hits = [s for (a, b), s in zip(trace.windows, trace.scores) if a <= end and start <= b]
    return float(max(hits)) if hits else 0.0


def write_intervals_csv(path, rows: Sequence[tuple]) -> None:
    """Rows of ``(series_id, AnomalyInterval)``."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series_id", "start", "end", "peak_score"])
        for series_id, iv in rows:
            writer.writerow([series_id, iv.start, iv.end, repr(float(iv.score))])


def read_intervals_csv(path) -> dict:
    """``series_id -> [AnomalyInterval]`` from an interval CSV."""
    out: dict = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            iv = AnomalyInterval(int(row["start"]), int(row["end"]), float(row.get("peak_score") or 0.0))
            out.setdefault(row["series_id"], []).append(iv)
    return out
