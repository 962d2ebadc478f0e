"""CSV ingestion, temporal splitting and synthetic benchmark generation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import AnomalyInterval, TimeSeries

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class DatasetSpec:
    path: str
    label_column: Optional[str] = None
    splits: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    normalize: bool = True
    id: Optional[str] = None

    def __post_init__(self):
        self.splits = tuple(float(s) for s in self.splits)
        if len(self.splits) != 3 or any(s <= 0 for s in self.splits):
            raise DataError("split fractions must be three positive numbers")
        if not math.isclose(sum(self.splits), 1.0, abs_tol=1e-9):
            raise DataError(f"split fractions must sum to 1, got {sum(self.splits)}")


def read_csv(path, label_column: Optional[str] = None, id: Optional[str] = None) -> TimeSeries:
    """One row per timestep, one numeric column per variate, optional 0/1 label column."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty dataset") from None
        header = [h.strip() for h in header]
        if label_column is not None and label_column not in header:
            raise DataError(f"label column {label_column!r} not found in {path}")
        label_idx = header.index(label_column) if label_column is not None else None
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} columns, got {len(row)}")
            values = []
            for j, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"row {lineno}: non-numeric value {cell!r} in column {header[j]!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"row {lineno}: non-finite value in column {header[j]!r}")
                if j == label_idx:
                    if v not in (0.0, 1.0):
                        raise DataError(f"row {lineno}: label must be 0 or 1, got {cell!r}")
                    labels.append(int(v))
                else:
                    values.append(v)
            rows.append(values)
    if not rows:
        raise DataError("empty dataset")
    if not rows[0]:
        raise DataError("no variate columns")
    values = np.asarray(rows, dtype=np.float64).T
    return TimeSeries(values, np.asarray(labels) if label_idx is not None else None, id or path.stem)


def split_series(x: TimeSeries, splits: Sequence[float]) -> tuple:
    """Contiguous train/validation/test split in temporal order."""
    n_train = int(round(x.T * splits[0]))
    n_val = int(round(x.T * splits[1]))
    if n_train < 1 or n_val < 1 or x.T - n_train - n_val < 1:
        raise DataError(f"series of length {x.T} too short for splits {tuple(splits)}")
    cut = n_train + n_val
    parts = (
        x.slice(0, n_train, f"{x.id}:train"),
        x.slice(n_train, cut, f"{x.id}:val"),
        x.slice(cut, x.T, f"{x.id}:test"),
    )
    if parts[1].labels is not None and parts[1].labels.any():
        log.warning("validation split of %s contains %d labelled anomalies; thresholds assume it is clean",
                    x.id, int(parts[1].labels.sum()))
    return parts


def load_csv(spec: DatasetSpec) -> tuple:
    return split_series(read_csv(spec.path, spec.label_column, spec.id), spec.splits)


def write_series_csv(x: TimeSeries, path, label_column: str = "label") -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        names = [f"x{i}" for i in range(x.d)]
        writer.writerow(names + ([label_column] if x.labels is not None else []))
        for t in range(x.T):
            row = [repr(float(v)) for v in x.values[:, t]]
            if x.labels is not None:
                row.append(int(x.labels[t]))
            writer.writerow(row)


# synthetic benchmarks --------------------------------------------------------

SEQUENCE_TYPES = ("flatline", "frequency-shift", "level-shift")


@dataclass
class SyntheticSpec:
    """Recipe for a labelled synthetic series.

    Amplitudes and noise are expressed in units of each variate's clean-signal
    standard deviation. Anomalies are planted only inside ``region`` (fractions
    of T) and keep at least ``min_gap`` clean steps between each other.
    """

    base: str = "sine"
    length: int = 4096
    d: int = 1
    period: float = 40.0
    noise: float = 0.05
    point_count: int = 0
    point_amplitude: float = 6.0
    seq_count: int = 0
    seq_length: Tuple[int, int] = (20, 60)
    seq_types: Tuple[str, ...] = ("flatline", "frequency-shift")
    region: Tuple[float, float] = (0.0, 1.0)
    min_gap: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.base not in ("sine", "ramp", "composite"):
            raise DataError(f"unknown base signal {self.base!r}")
        if self.length < 2 or self.d < 1:
            raise DataError("length must be >= 2 and d >= 1")
        bad = set(self.seq_types) - set(SEQUENCE_TYPES)
        if bad:
            raise DataError(f"unknown sequence anomaly types {sorted(bad)}")
        self.seq_length = tuple(self.seq_length)
        self.seq_types = tuple(self.seq_types)
        self.region = tuple(self.region)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = cls.__dataclass_fields__
        unknown = set(data) - set(known)
        if unknown:
            raise DataError(f"unknown synthetic spec fields {sorted(unknown)}")
        return cls(**data)


@dataclass
class SyntheticSeries:
    series: TimeSeries
    points: List[int] = field(default_factory=list)
    intervals: List[AnomalyInterval] = field(default_factory=list)

    @property
    def truth(self) -> List[AnomalyInterval]:
        spans = [AnomalyInterval(t, t) for t in self.points] + list(self.intervals)
        return sorted(spans, key=lambda iv: iv.start)


def _base_signal(spec: SyntheticSpec, t: np.ndarray, i: int) -> np.ndarray:
    phase = i * np.pi / 3
    if spec.base == "sine":
        return np.sin(2 * np.pi * t / spec.period + phase)
    if spec.base == "ramp":
        return (t / max(spec.length - 1, 1)) * 2.0 - 1.0 + 0.1 * i
    return (np.sin(2 * np.pi * t / spec.period + phase)
            + 0.5 * np.sin(2 * np.pi * t / (spec.period * 2.7) + 2 * phase))


def _place(rng, lengths, lo, hi, min_gap, attempts=2000):
    """Random disjoint placements of spans with the given lengths inside [lo, hi)."""
    for _ in range(attempts):
        starts = []
        taken = []
        ok = True
        for n in lengths:
            if hi - lo - n < 0:
                return None
            for _ in range(200):
                s = int(rng.integers(lo, hi - n + 1))
                if all(s + n + min_gap <= a or b + min_gap <= s for a, b in taken):
                    break
            else:
                ok = False
                break
            starts.append(s)
            taken.append((s, s + n))
        if ok:
            return starts
    return None


def generate_synthetic(spec: SyntheticSpec) -> SyntheticSeries:
    rng = np.random.default_rng(spec.seed)
    T = spec.length
    t = np.arange(T, dtype=np.float64)
    clean = np.stack([_base_signal(spec, t, i) for i in range(spec.d)])
    sigma = clean.std(axis=1, keepdims=True)
    sigma = np.where(sigma > 0, sigma, 1.0)
    values = clean + spec.noise * sigma * rng.standard_normal(clean.shape)
    labels = np.zeros(T, dtype=np.int8)

    lo = int(spec.region[0] * T)
    hi = int(spec.region[1] * T)
    seq_lengths = [int(rng.integers(spec.seq_length[0], spec.seq_length[1] + 1))
                   for _ in range(spec.seq_count)]
    spans = seq_lengths + [1] * spec.point_count
    starts = _place(rng, spans, lo, hi, spec.min_gap) if spans else []
    if starts is None:
        raise DataError("anomaly budget does not fit in the series without overlap")

    intervals = []
    for k, (s, n) in enumerate(zip(starts[:spec.seq_count], seq_lengths)):
        kind = spec.seq_types[k % len(spec.seq_types)]
        seg = slice(s, s + n)
        if kind == "flatline":
            values[:, seg] = clean.mean(axis=1, keepdims=True)
        elif kind == "frequency-shift":
            tt = t[seg] - s
            for i in range(spec.d):
                values[i, seg] = (np.sin(2 * np.pi * tt * 2.5 / spec.period + np.pi / 2 + i * np.pi / 3)
                                  * sigma[i, 0] * np.sqrt(2)
                                  + spec.noise * sigma[i, 0] * rng.standard_normal(n))
        else:
            values[:, seg] += 3.0 * sigma
        labels[seg] = 1
        intervals.append(AnomalyInterval(s, s + n - 1))

    points = []
    for s in starts[spec.seq_count:]:
        i = int(rng.integers(spec.d))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        values[i, s] += sign * spec.point_amplitude * sigma[i, 0]
        labels[s] = 1
        points.append(s)

    series = TimeSeries(values, labels, id=f"synthetic-{spec.base}-{spec.seed}")
    return SyntheticSeries(series, sorted(points), sorted(intervals, key=lambda iv: iv.start))


def labels_from_intervals(intervals: Sequence[AnomalyInterval], T: int) -> np.ndarray:
    labels = np.zeros(T, dtype=np.int8)
    for iv in intervals:
        labels[iv.start:iv.end + 1] = 1
    return labels
