"""Self-imputation objective and the optimisation loop for both heads."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .core import TimeSeries, slice_windows
from .imputer import (
    BIDIRECTIONAL,
    RECONSTRUCTION,
    ImputerModel,
    bidirectional_batch,
    init_model,
    reconstruct_batch,
)
from .masking import SENTINEL, make_point_masks, make_sequence_masks, mask_matrix

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    head: str = RECONSTRUCTION
    window: int = 64
    stride: int = 16
    masks: int = 8  # M for the reconstruction head, N for the bidirectional head
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    clip_norm: float = 5.0
    val_fraction: float = 0.2
    levels: int = 2
    kernel: int = 5
    hidden: int = 4
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.head not in (RECONSTRUCTION, BIDIRECTIONAL):
            raise ValueError(f"unknown head {self.head!r}")
        for name in ("window", "stride", "masks", "epochs", "batch_size", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in data.items() if k in known})


def loss(x, x_hat) -> float:
    """Mean over timesteps of the per-timestep L1 norm across variates."""
    a = x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)
    b = x_hat.values if isinstance(x_hat, TimeSeries) else np.asarray(x_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum() / a.shape[-1])


def batch_loss(x: np.ndarray, x_hat) -> ad.Tensor:
    """Tracked version of :func:`loss` averaged over a (B, d, T) batch."""
    B, _, T = x.shape
    return ad.total(ad.absolute(ad.sub(x, x_hat))) * (1.0 / (B * T))


def reconstruct_windows(
    model: ImputerModel,
    windows: np.ndarray,
    masks: np.ndarray,
    params=None,
):
    """Assemble the self-imputed reconstruction of each window.

    ``windows`` is (B, d, n); ``masks`` is (K, B, d, n) with the K masks of each
    window disjoint and exhaustive, so every cell is imputed by exactly one pass.
    """
    K, B, d, n = masks.shape
    stacked = np.broadcast_to(windows, masks.shape).reshape(K * B, d, n)
    flat_masks = masks.reshape(K * B, d, n)
    if model.head == RECONSTRUCTION:
        inputs = np.where(flat_masks, SENTINEL, stacked)
        parts = reconstruct_batch(model, inputs, flat_masks, params)
    else:
        gaps = [_gap(m) for m in flat_masks]
        parts = bidirectional_batch(model, stacked, gaps, params)
    return ad.total(ad.reshape(parts, (K, B, d, n)), axis=0)


def _gap(mask: np.ndarray) -> tuple:
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(cols[-1]) + 1


def draw_masks(model: ImputerModel, B: int, K: int, rng: np.random.Generator) -> np.ndarray:
    d, n = model.d, model.window
    if model.head == RECONSTRUCTION:
        per_window = [
            mask_matrix(make_point_masks(d, n, K, int(rng.integers(2**31))), d)
            for _ in range(B)
        ]
        return np.stack(per_window, axis=1)
    seq = mask_matrix(make_sequence_masks(n, K), d)
    return np.repeat(seq[:, None], B, axis=1)


class Adam:
    """Adaptive-moment descent with global-norm gradient clipping."""

    def __init__(self, params: dict, lr: float, beta1: float, beta2: float,
                 clip_norm: float, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.clip_norm, self.eps = clip_norm, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        # fixed key order keeps the update reproducible
        keys = list(params)
        norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in keys))
        scale = min(1.0, self.clip_norm / norm) if norm > 0 else 1.0
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k in keys:
            g = grads[k] * scale
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def loss_and_grads(model: ImputerModel, windows: np.ndarray, masks: np.ndarray):
    tracked = {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in model.params.items()}
    with ad.Tape() as tape:
        value = batch_loss(windows, reconstruct_windows(model, windows, masks, tracked))
    grads = ad.backward(tape, value)
    return float(value.value), {k: grads.get(t, np.zeros_like(t.value)) for k, t in tracked.items()}


def evaluate(model: ImputerModel, windows: np.ndarray, seed: int, K: int, batch_size: int = 64) -> float:
    """Mean reconstruction loss over ``windows`` with a fixed mask draw."""
    if len(windows) == 0:
        return float("nan")
    rng = np.random.default_rng(seed)
    total = 0.0
    for i in range(0, len(windows), batch_size):
        chunk = windows[i:i + batch_size]
        masks = draw_masks(model, len(chunk), K, rng)
        x_hat = reconstruct_windows(model, chunk, masks).value
        total += np.abs(chunk - x_hat).sum() / chunk.shape[-1]
    return total / len(windows)


def _cut(values: np.ndarray, length: int, stride: int, offset: int = 0) -> list:
    T = values.shape[-1]
    return [values[:, s:s + length] for s in range(offset, T - length + 1, stride)]


def _split(dataset: Sequence[TimeSeries], cfg: TrainConfig) -> tuple:
    """Training segments (heads of each series) and fixed validation windows (tails)."""
    heads, val = [], []
    for series in dataset:
        n_val = int(round(series.T * cfg.val_fraction))
        if n_val < cfg.window or series.T - n_val < cfg.window:
            n_val = 0
        if series.T - n_val >= cfg.window:
            heads.append(series.values[:, :series.T - n_val])
        if n_val:
            val += _cut(series.values[:, series.T - n_val:], cfg.window, cfg.stride)
    if not heads:
        raise ValueError(f"no training window of length {cfg.window} fits the data")
    d = dataset[0].d
    return heads, np.asarray(val).reshape(-1, d, cfg.window)


def _epoch_windows(heads: list, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Windows for one epoch; a random phase offset per series avoids aliasing with the stride."""
    windows = []
    for values in heads:
        slack = values.shape[-1] - cfg.window
        offset = int(rng.integers(min(cfg.stride, slack + 1))) if slack > 0 else 0
        windows += _cut(values, cfg.window, cfg.stride, offset)
    return np.asarray(windows)


def train(
    dataset: Sequence[TimeSeries],
    cfg: TrainConfig,
    history: Optional[list] = None,
    model: Optional[ImputerModel] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> ImputerModel:
    """Fit an imputer by self-imputation on (already normalized) series.

    Per-epoch ``{"epoch", "train_loss", "val_loss"}`` records are appended to
    ``history`` when given. The returned model is the one with the lowest
    validation loss (lowest training loss when no validation windows exist).
    """
    if not dataset:
        raise ValueError("empty dataset")
    d = dataset[0].d
    if any(s.d != d for s in dataset):
        raise ValueError("all series must share the same number of variates")
    if cfg.head == BIDIRECTIONAL and cfg.masks > cfg.window:
        raise ValueError("segment count exceeds window length")
    heads, val_windows = _split(dataset, cfg)
    if model is None:
        model = init_model(d, cfg.window, cfg.head, cfg.levels, cfg.kernel, cfg.hidden, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.clip_norm)
    best = None
    best_score = np.inf

    def record(epoch, train_loss):
        nonlocal best, best_score
        val_loss = evaluate(model, val_windows, cfg.seed + 1, cfg.masks)
        score = val_loss if len(val_windows) else train_loss
        if not np.isfinite(score):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        entry = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss}
        if history is not None:
            history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if score < best_score:
            best_score = score
            best = {k: v.copy() for k, v in model.params.items()}

    record(0, evaluate(model, np.asarray([w for v in heads for w in _cut(v, cfg.window, cfg.stride)]),
                       cfg.seed + 2, cfg.masks))
    for epoch in range(1, cfg.epochs + 1):
        train_windows = _epoch_windows(heads, cfg, rng)
        order = rng.permutation(len(train_windows))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            chunk = train_windows[order[i:i + cfg.batch_size]]
            masks = draw_masks(model, len(chunk), cfg.masks, rng)
            value, grads = loss_and_grads(model, chunk, masks)
            if not np.isfinite(value):
                raise FloatingPointError(f"training diverged at epoch {epoch}")
            losses.append(value * len(chunk))
            opt.step(model.params, grads)
        record(epoch, float(np.sum(losses) / len(train_windows)))
    model.params = best
    return model
