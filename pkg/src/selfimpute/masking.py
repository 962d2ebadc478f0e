"""Self-supervised mask generation for point and sequence imputation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import TimeSeries

#: value written into masked cells (the mean in normalized units)
SENTINEL = 0.0


@dataclass(frozen=True)
class PointMaskSet:
    """``M`` disjoint element masks over a ``(d, T)`` grid.

    Each mask is an array of flat indices into the row-major grid.
    """

    d: int
    T: int
    masks: tuple
    seed: int

    @property
    def M(self) -> int:
        return len(self.masks)

    def boolean(self, k: int) -> np.ndarray:
        out = np.zeros(self.d * self.T, dtype=bool)
        out[self.masks[k]] = True
        return out.reshape(self.d, self.T)

    def to_json(self) -> str:
        return json.dumps({
            "mode": "point", "d": self.d, "T": self.T, "seed": self.seed,
            "masks": [m.tolist() for m in self.masks],
        })


@dataclass(frozen=True)
class SequenceMaskSet:
    """``N`` consecutive half-open ``(start, stop)`` timestep segments."""

    T: int
    segments: tuple

    @property
    def N(self) -> int:
        return len(self.segments)

    def boolean(self, k: int, d: int) -> np.ndarray:
        out = np.zeros((d, self.T), dtype=bool)
        start, stop = self.segments[k]
        out[:, start:stop] = True
        return out

    def to_json(self) -> str:
        return json.dumps({
            "mode": "sequence", "T": self.T,
            "segments": [list(s) for s in self.segments],
        })


MaskSet = Union[PointMaskSet, SequenceMaskSet]


def mask_set_from_json(text: str) -> MaskSet:
    data = json.loads(text)
    if data["mode"] == "point":
        masks = tuple(np.asarray(m, dtype=np.int64) for m in data["masks"])
        return PointMaskSet(data["d"], data["T"], masks, data["seed"])
    return SequenceMaskSet(data["T"], tuple(tuple(s) for s in data["segments"]))


@dataclass(frozen=True)
class MaskedSample:
    input: np.ndarray
    mask: np.ndarray  # boolean (d, T)
    target: np.ndarray  # original values at masked positions, row-major order


def balanced_sizes(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + 1 if k < extra else base for k in range(parts)]


def make_point_masks(d: int, T: int, M: int, seed: int = 0) -> PointMaskSet:
    n = d * T
    if M < 1:
        raise ValueError("mask count must be >= 1")
    if M > n:
        raise ValueError("mask count exceeds element count")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0] + balanced_sizes(n, M))
    masks = tuple(np.sort(perm[bounds[k]:bounds[k + 1]]) for k in range(M))
    return PointMaskSet(d, T, masks, seed)


def make_sequence_masks(T: int, N: int) -> SequenceMaskSet:
    if N < 1:
        raise ValueError("segment count must be >= 1")
    if N > T:
        raise ValueError("segment count exceeds series length")
    bounds = np.cumsum([0] + balanced_sizes(T, N))
    return SequenceMaskSet(T, tuple((int(bounds[k]), int(bounds[k + 1])) for k in range(N)))


def mask_matrix(maskset: MaskSet, d: int) -> np.ndarray:
    """Stack all masks as a boolean ``(K, d, T)`` array."""
    if isinstance(maskset, PointMaskSet):
        return np.stack([maskset.boolean(k) for k in range(maskset.M)])
    return np.stack([maskset.boolean(k, d) for k in range(maskset.N)])


def materialize_samples(x: TimeSeries, maskset: MaskSet) -> list[MaskedSample]:
    if isinstance(maskset, PointMaskSet):
        if (maskset.d, maskset.T) != (x.d, x.T):
            raise ValueError(
                f"mask grid {maskset.d}x{maskset.T} does not match series {x.d}x{x.T}"
            )
    elif maskset.T != x.T:
        raise ValueError(f"mask length {maskset.T} does not match series length {x.T}")
    samples = []
    for mask in mask_matrix(maskset, x.d):
        masked_input = np.where(mask, SENTINEL, x.values)
        samples.append(MaskedSample(masked_input, mask, x.values[mask]))
    return samples
