"""Desk-scale synthetic benchmarks for both detectors."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional


from .core import AnomalyInterval
from .data import SyntheticSpec, generate_synthetic, split_series
from .detection import DetectionConfig, intervals_to_flags
from .metrics import match_intervals, point_prf
from .persistence import Checkpoint
from .pipeline import detect, fit
from .scoring import POINT, SEQUENCE
from .training import TrainConfig


@dataclass
class PointBenchmark:
    synthetic: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(
        base="sine", length=4096, d=2, period=37.3, noise=0.05,
        point_count=20, point_amplitude=6.0, region=(0.81, 0.99), min_gap=16,
    ))
    splits: tuple = (0.6, 0.2, 0.2)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        head="reconstruction", window=64, stride=16, masks=4, epochs=60,
        batch_size=16, learning_rate=3e-3,
    ))
    detect: DetectionConfig = field(default_factory=lambda: DetectionConfig(
        window=64, stride=8, mode=POINT, period=4,
    ))


@dataclass
class SequenceBenchmark:
    synthetic: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(
        base="sine", length=4096, d=1, period=37.3, noise=0.05,
        seq_count=6, seq_length=(20, 60), seq_types=("flatline", "frequency-shift"),
        region=(0.72, 0.97), min_gap=72,
    ))
    splits: tuple = (0.5, 0.2, 0.3)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        head="bidirectional", window=64, stride=16, masks=8, epochs=60,
        batch_size=16, learning_rate=3e-3,
    ))
    detect: DetectionConfig = field(default_factory=lambda: DetectionConfig(
        window=64, stride=8, mode=SEQUENCE,
    ))


def _shift(intervals, offset: int, T: int):
    return [AnomalyInterval(iv.start - offset, iv.end - offset)
            for iv in intervals if 0 <= iv.start - offset and iv.end - offset < T]


def run_point_benchmark(bench: Optional[PointBenchmark] = None, seed: int = 0) -> dict:
    bench = bench or PointBenchmark()
    syn = generate_synthetic(replace(bench.synthetic, seed=seed))
    train_part, val, test = split_series(syn.series, bench.splits)
    history: list = []
    t0 = time.perf_counter()
    tcfg = replace(bench.train, seed=seed)
    ckpt = fit([train_part], [val], tcfg, bench.detect, history=history)
    intervals, trace = detect(ckpt, test, bench.detect)
    pred = intervals_to_flags(intervals, test.T)
    p, r, f1 = point_prf(pred, test.labels)
    return {
        "precision": p, "recall": r, "f1": f1,
        "threshold": ckpt.thresholds[POINT],
        "history": history,
        "n_spikes": int(test.labels.sum()),
        "n_flagged": int(pred.sum()),
        "seconds": time.perf_counter() - t0,
        "checkpoint": ckpt,
    }


def run_sequence_benchmark(bench: Optional[SequenceBenchmark] = None, seed: int = 0,
                           ckpt: Optional[Checkpoint] = None) -> dict:
    """Fit (unless ``ckpt`` is given) and evaluate the full detector and its ablations."""
    bench = bench or SequenceBenchmark()
    syn = generate_synthetic(replace(bench.synthetic, seed=seed))
    train_part, val, test = split_series(syn.series, bench.splits)
    offset = train_part.T + val.T
    truth = _shift(syn.intervals, offset, test.T)
    history: list = []
    t0 = time.perf_counter()
    if ckpt is None:
        ckpt = fit([train_part], [val], replace(bench.train, seed=seed), bench.detect, history=history)
    variants = {
        "full": bench.detect,
        "no_localization": replace(bench.detect, localize=False),
        "residual_only": replace(bench.detect, localize=False, scoring="residual"),
    }
    results = {}
    for name, dcfg in variants.items():
        intervals, _ = detect(ckpt, test, dcfg)
        pred = intervals_to_flags(intervals, test.T)
        p, r, f1 = point_prf(pred, test.labels)
        m = match_intervals(intervals, truth)
        results[name] = {
            "precision": p, "recall": r, "f1": f1,
            "interval_recall": m.recall, "interval_precision": m.precision,
            "start_errors": m.start_errors, "end_errors": m.end_errors,
            "max_boundary_error": m.max_boundary_error,
            "intervals": [(iv.start, iv.end) for iv in intervals],
        }
    return {
        "truth": [(iv.start, iv.end) for iv in truth],
        "variants": results,
        "thresholds": dict(ckpt.thresholds),
        "history": history,
        "seconds": time.perf_counter() - t0,
        "checkpoint": ckpt,
    }
