"""Time-series containers, z-score normalization and window slicing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class TimeSeries:
    """A d-variate series stored as a ``(d, T)`` float array.

    ``labels`` holds optional per-timestep 0/1 anomaly flags.
    """

    values: np.ndarray
    labels: Optional[np.ndarray] = None
    id: str = "series"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("empty input")
        if not np.all(np.isfinite(values)):
            raise ValueError("series contains NaN or infinite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (values.shape[1],):
                raise ValueError(
                    f"labels must have {values.shape[1]} entries, got {labels.shape}"
                )
            if not np.all((labels == 0) | (labels == 1)):
                raise ValueError("labels must be 0 or 1")
            labels = labels.astype(np.int8)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.T

    def slice(self, start: int, stop: int, id: Optional[str] = None) -> "TimeSeries":
        labels = None if self.labels is None else self.labels[start:stop]
        return TimeSeries(self.values[:, start:stop], labels, id or self.id)

    def with_values(self, values: np.ndarray) -> "TimeSeries":
        return TimeSeries(values, self.labels, self.id)


@dataclass(frozen=True)
class AnomalyInterval:
    """Inclusive ``[start, end]`` span of anomalous timesteps."""

    start: int
    end: int
    score: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"invalid interval [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "AnomalyInterval") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        std = np.asarray(self.std, dtype=np.float64).ravel()
        if mean.shape != std.shape:
            raise ValueError("mean and std must have the same length")
        if np.any(std <= 0):
            raise ValueError("standard deviations must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        return cls(np.asarray(data["mean"]), np.asarray(data["std"]))


STD_FLOOR = 1e-8


def fit_normalizer(train: TimeSeries) -> NormalizationStats:
    values = train.values
    if values.size == 0:
        raise ValueError("empty input")
    mean = values.mean(axis=1)
    std = values.std(axis=1)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return NormalizationStats(mean, std)


def _check_dims(x: TimeSeries, stats: NormalizationStats) -> None:
    if x.d != stats.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: series has d={x.d}, stats have d={stats.mean.shape[0]}"
        )


def normalize(x: TimeSeries, stats: NormalizationStats) -> TimeSeries:
    _check_dims(x, stats)
    return x.with_values((x.values - stats.mean[:, None]) / stats.std[:, None])


def denormalize(x: TimeSeries, stats: NormalizationStats) -> TimeSeries:
    _check_dims(x, stats)
    return x.with_values(x.values * stats.std[:, None] + stats.mean[:, None])


def window_starts(T: int, length: int, stride: int) -> list[int]:
    """Start offsets of sliding windows; the last window is right-aligned to ``T - 1``."""
    if length < 1 or stride < 1:
        raise ValueError("window length and stride must be >= 1")
    if stride > length:
        raise ValueError("stride must not exceed window length")
    if length >= T:
        return [0]
    starts = list(range(0, T - length + 1, stride))
    if starts[-1] + length < T:
        starts.append(T - length)
    return starts


def slice_windows(x: TimeSeries, length: int, stride: int) -> list[TimeSeries]:
    """Cut ``x`` into windows covering every timestep.

    A window longer than the series degrades to the whole series.
    """
    if length >= x.T:
        return [x]
    return [
        x.slice(s, s + length, id=f"{x.id}@{s}")
        for s in window_starts(x.T, length, stride)
    ]
