"""End-to-end fit / calibrate / detect on raw (unnormalized) series."""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import numpy as np

from .core import NormalizationStats, TimeSeries, fit_normalizer, normalize
from .detection import DetectionConfig, detect_sequences_traced, flag_points, point_scores
from .imputer import BIDIRECTIONAL, RECONSTRUCTION
from .persistence import Checkpoint
from .scoring import (
    POINT,
    SEQUENCE,
    AnomalyScoreTrace,
    calibrate_threshold,
    sequence_residuals,
    threshold_from_scores,
)
from .training import TrainConfig, train

log = logging.getLogger(__name__)

HEAD_FOR_MODE = {POINT: RECONSTRUCTION, SEQUENCE: BIDIRECTIONAL}


def _normalized(series: Sequence[TimeSeries], stats: Optional[NormalizationStats]) -> List[TimeSeries]:
    return [normalize(s, stats) if stats is not None else s for s in series]


def calibrate(ckpt: Checkpoint, validation: Sequence[TimeSeries], dcfg: DetectionConfig) -> dict:
    """Thresholds for every scoring variant the model supports (validation is raw data)."""
    val = _normalized(validation, ckpt.normalization)
    model = ckpt.model
    if model.head == RECONSTRUCTION:
        return {POINT: calibrate_threshold(model, val, POINT, period=dcfg.period)}
    return {
        SEQUENCE: calibrate_threshold(model, val, SEQUENCE, dcfg.window, dcfg.stride,
                                      scheme=dcfg.scheme, segments=dcfg.segments),
        "residual": threshold_from_scores(
            sequence_residuals(v, model, dcfg.window, dcfg.stride, dcfg.segments) for v in val
        ),
    }


def fit(
    train_series: Sequence[TimeSeries],
    validation: Sequence[TimeSeries],
    tcfg: TrainConfig,
    dcfg: Optional[DetectionConfig] = None,
    use_normalization: bool = True,
    history: Optional[list] = None,
) -> Checkpoint:
    dcfg = dcfg or DetectionConfig(window=tcfg.window, mode=POINT if tcfg.head == RECONSTRUCTION else SEQUENCE)
    stats = fit_normalizer(_concat(train_series)) if use_normalization else None
    model = train(_normalized(train_series, stats), tcfg, history=history)
    ckpt = Checkpoint(model, stats, {}, tcfg.to_dict())
    ckpt.thresholds = calibrate(ckpt, validation, dcfg)
    log.info("calibrated thresholds %s", ckpt.thresholds)
    return ckpt


def _concat(series: Sequence[TimeSeries]) -> TimeSeries:
    return TimeSeries(np.concatenate([s.values for s in series], axis=1))


def threshold_for(ckpt: Checkpoint, dcfg: DetectionConfig, override: Optional[float] = None) -> float:
    if override is not None:
        return float(override)
    key = POINT if dcfg.mode == POINT else ("residual" if dcfg.scoring == "residual" else SEQUENCE)
    if key not in ckpt.thresholds:
        raise ValueError(f"checkpoint has no calibrated {key!r} threshold; pass one explicitly")
    return float(ckpt.thresholds[key])


def detect(ckpt: Checkpoint, series: TimeSeries, dcfg: DetectionConfig,
           threshold: Optional[float] = None) -> tuple:
    """Intervals and score trace for one raw series."""
    if ckpt.model.head != HEAD_FOR_MODE[dcfg.mode]:
        raise ValueError(
            f"{dcfg.mode} detection needs a {HEAD_FOR_MODE[dcfg.mode]!r} model, "
            f"checkpoint holds a {ckpt.model.head!r} model"
        )
    lam = threshold_for(ckpt, dcfg, threshold)
    x = normalize(series, ckpt.normalization) if ckpt.normalization is not None else series
    if dcfg.mode == POINT:
        scores = point_scores(x, ckpt.model, lam, dcfg)
        return flag_points(scores, lam), AnomalyScoreTrace(POINT, scores, lam)
    return detect_sequences_traced(x, ckpt.model, lam, dcfg)

