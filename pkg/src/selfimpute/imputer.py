"""Hierarchical split/convolve/interact imputation network.

The network recursively splits a window into even- and odd-indexed halves,
lets the two halves modulate each other through small convolution banks,
re-interleaves the leaves into the original order and maps the result back
onto the input through a residual plus a position-wise affine decoder.

Two heads are supported:

* ``reconstruction`` - one network that rebuilds the whole window; the
  outputs at masked positions are the imputations.
* ``bidirectional`` - two independent networks; ``fwd`` forecasts a gap from
  the context to its left, ``bwd`` from the time-reversed context to its
  right, and the two forecasts are blended by proximity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from . import autodiff as ad
from .masking import SENTINEL, MaskedSample

RECONSTRUCTION = "reconstruction"
BIDIRECTIONAL = "bidirectional"
HEADS = (RECONSTRUCTION, BIDIRECTIONAL)
BANKS = ("phi", "psi", "U", "P")


@dataclass
class SciBlockParams:
    """Weights of one split/interact block; values may be arrays or tracked tensors."""

    banks: Dict[str, tuple]  # bank name -> (w1, b1, w2, b2)
    kernel: int

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")


@dataclass
class ImputationResult:
    imputed: np.ndarray
    provenance: np.ndarray  # True where the value is an imputation

    @property
    def n_imputed(self) -> int:
        return int(self.provenance.sum())


@dataclass
class ImputerModel:
    d: int
    window: int
    head: str = RECONSTRUCTION
    levels: int = 2
    kernel: int = 5
    hidden: int = 4
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.levels < 1 or self.hidden < 1 or self.d < 1:
            raise ValueError("levels, hidden multiplier and d must be >= 1")

    @property
    def nets(self) -> tuple:
        return ("main",) if self.head == RECONSTRUCTION else ("fwd", "bwd")

    @property
    def input_length(self) -> int:
        """Window length rounded up to a multiple of ``2**levels``."""
        q = 2 ** self.levels
        return -(-self.window // q) * q

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def shapes(self) -> Dict[str, tuple]:
        d, hd, k, n = self.d, self.hidden * self.d, self.kernel, self.input_length
        shapes = {}
        for net in self.nets:
            for level, j in block_ids(self.levels):
                for bank in BANKS:
                    prefix = f"{net}.block{level}_{j}.{bank}"
                    shapes[f"{prefix}.w1"] = (hd, d, k)
                    shapes[f"{prefix}.b1"] = (hd,)
                    shapes[f"{prefix}.w2"] = (d, hd, k)
                    shapes[f"{prefix}.b2"] = (d,)
            shapes[f"{net}.decoder.W"] = (n, n)
            shapes[f"{net}.decoder.b"] = (n,)
        return shapes


def block_ids(levels: int) -> Iterable[tuple]:
    for level in range(levels):
        for j in range(2 ** level):
            yield level, j


def init_model(
    d: int,
    window: int,
    head: str = RECONSTRUCTION,
    levels: int = 2,
    kernel: int = 5,
    hidden: int = 4,
    seed: int = 0,
    scale: float = 1.0,
) -> ImputerModel:
    """Randomly initialised model; ``scale=0`` gives the all-zero (identity) network."""
    model = ImputerModel(d, window, head, levels, kernel, hidden)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in model.shapes().items():
        if name.endswith(".W"):
            std = 0.1 / np.sqrt(shape[1])
        elif name.endswith((".w1", ".w2")):
            std = 1.0 / np.sqrt(shape[1] * shape[2])
        else:
            std = 0.0
        params[name] = scale * std * rng.standard_normal(shape)
    model.params = params
    return model


def block_params(params: dict, net: str, level: int, j: int, kernel: int) -> SciBlockParams:
    prefix = f"{net}.block{level}_{j}"
    banks = {
        bank: tuple(params[f"{prefix}.{bank}.{part}"] for part in ("w1", "b1", "w2", "b2"))
        for bank in BANKS
    }
    return SciBlockParams(banks, kernel)


def _bank(x, weights, kernel: int):
    w1, b1, w2, b2 = weights
    p = (kernel - 1) // 2
    h = ad.silu(ad.conv1d(ad.pad_edge(x, p, p), w1, b1))
    return ad.tanh(ad.conv1d(ad.pad_edge(h, p, p), w2, b2))


def split_even_odd(x):
    T = x.shape[-1]
    return ad.take(x, np.arange(0, T, 2)), ad.take(x, np.arange(1, T, 2))


def interleave_index(half: int) -> np.ndarray:
    """Gather index turning ``concat(even, odd)`` back into natural order."""
    index = np.empty(2 * half, dtype=np.int64)
    index[0::2] = np.arange(half)
    index[1::2] = half + np.arange(half)
    return index


def interleave(even, odd):
    return ad.take(ad.concat([even, odd]), interleave_index(even.shape[-1]))


def sci_block_forward(x, params: SciBlockParams):
    """Split ``x`` (B, C, T) into even/odd halves and let them interact.

    With all-zero weights both halves pass through unchanged.
    """
    x = ad.as_tensor(x)
    if x.shape[-1] % 2:
        raise ValueError("length not divisible by 2")
    even, odd = split_even_odd(x)
    b = params.banks
    k = params.kernel
    d = odd * ad.exp(_bank(even, b["phi"], k))
    c = even * ad.exp(_bank(odd, b["psi"], k))
    return c + _bank(d, b["U"], k), d - _bank(c, b["P"], k)


def _tree(x, params, net, level, j, levels, kernel):
    even, odd = sci_block_forward(x, block_params(params, net, level, j, kernel))
    if level + 1 < levels:
        even = _tree(even, params, net, level + 1, 2 * j, levels, kernel)
        odd = _tree(odd, params, net, level + 1, 2 * j + 1, levels, kernel)
    return interleave(even, odd)


def scinet_forward(x, model: ImputerModel, net: Optional[str] = None, params: Optional[dict] = None):
    """Run one sub-network on ``x`` of shape (B, d, n); returns the same shape.

    A plain (d, n) array is accepted too and gives a (d, n) array back.
    ``params`` overrides ``model.params`` (tracked tensors while training).
    """
    params = model.params if params is None else params
    net = net or model.nets[0]
    if not isinstance(x, ad.Tensor) and np.ndim(x) == 2:
        return scinet_forward(np.asarray(x)[None], model, net, params).value[0]
    x = ad.as_tensor(x)
    n = x.shape[-1]
    if n % (2 ** model.levels):
        raise ValueError(f"length {n} not divisible by 2**{model.levels}")
    if n != model.input_length:
        raise ValueError(f"input length {n} does not match model length {model.input_length}")
    features = _tree(x, params, net, 0, 0, model.levels, model.kernel)
    return x + ad.time_affine(features, params[f"{net}.decoder.W"], params[f"{net}.decoder.b"])


def run_padded(model: ImputerModel, net: str, x: np.ndarray, params=None):
    """Edge-pad (B, d, n) inputs on the right to the model length, run, and strip the padding."""
    n = x.shape[-1]
    pad = model.input_length - n
    if pad < 0:
        raise ValueError(f"window length {n} exceeds model length {model.input_length}")
    if pad:
        x = np.pad(x, [(0, 0), (0, 0), (0, pad)], mode="edge")
    out = scinet_forward(x, model, net, params)
    if pad:
        out = ad.take(out, np.arange(n))
    return out


def _require_head(model: ImputerModel, head: str) -> None:
    if model.head != head:
        raise ValueError(f"model head is {model.head!r}, expected {head!r}")


# reconstruction head --------------------------------------------------------

def reconstruct_batch(model: ImputerModel, inputs: np.ndarray, masks: np.ndarray, params=None):
    """Imputations for a batch of masked windows.

    ``inputs`` and ``masks`` are (B, d, n); returns the network outputs at masked
    cells and zero elsewhere (a tensor when ``params`` are tracked).
    """
    out = run_padded(model, "main", inputs, params)
    return ad.where(masks, out, 0.0)


def impute_points(sample: MaskedSample, model: ImputerModel) -> ImputationResult:
    _require_head(model, RECONSTRUCTION)
    mask = np.asarray(sample.mask, dtype=bool)
    if not mask.any():
        return ImputationResult(sample.input.copy(), mask.copy())
    out = run_padded(model, "main", sample.input[None]).value[0]
    return ImputationResult(np.where(mask, out, sample.input), mask.copy())


# bidirectional head ---------------------------------------------------------

def blend_weights(n: int, start: int, stop: int) -> tuple:
    """Forward/backward blend weights over a gap ``[start, stop)`` inside a length-``n`` window."""
    if start == 0 and stop >= n:
        raise ValueError("no context: gap covers the whole window")
    wf = np.zeros(n)
    wb = np.zeros(n)
    g = stop - start
    j = np.arange(g)
    if start == 0:
        wb[start:stop] = 1.0
    elif stop >= n:
        wf[start:stop] = 1.0
    else:
        wf[start:stop] = (g - j) / (g + 1)
        wb[start:stop] = (j + 1) / (g + 1)
    return wf, wb


def forecast_inputs(x: np.ndarray, start: int, stop: int) -> tuple:
    """Inputs for the two directions: left context only, and reversed right context only."""
    fwd = x.copy()
    fwd[..., start:] = SENTINEL
    bwd = x.copy()
    bwd[..., :stop] = SENTINEL
    return fwd, bwd[..., ::-1].copy()


def bidirectional_batch(model: ImputerModel, windows: np.ndarray, gaps, params=None):
    """Blend of both directions' forecasts for each window/gap pair.

    ``windows`` is (B, d, n); ``gaps`` lists ``(start, stop)`` per window.
    Returns a (B, d, n) result that is zero outside each gap.
    """
    n = windows.shape[-1]
    fwd_in, bwd_in, wf, wb = [], [], [], []
    for x, (start, stop) in zip(windows, gaps):
        f, b = forecast_inputs(x, start, stop)
        fwd_in.append(f)
        bwd_in.append(b)
        a, c = blend_weights(n, start, stop)
        wf.append(a)
        wb.append(c)
    wf = np.asarray(wf)[:, None, :]
    wb = np.asarray(wb)[:, None, :]
    out = 0.0
    if wf.any():
        out = out + run_padded(model, "fwd", np.asarray(fwd_in), params) * wf
    if wb.any():
        back = run_padded(model, "bwd", np.asarray(bwd_in), params)
        out = out + ad.take(back, np.arange(n)[::-1]) * wb
    return ad.as_tensor(out)


def gap_of(mask: np.ndarray) -> tuple:
    cols = np.flatnonzero(np.asarray(mask).any(axis=0))
    if cols.size == 0:
        raise ValueError("empty mask")
    if cols[-1] - cols[0] + 1 != cols.size:
        raise ValueError("sequence mask must be contiguous")
    return int(cols[0]), int(cols[-1]) + 1


def impute_sequence(sample: MaskedSample, model: ImputerModel) -> ImputationResult:
    _require_head(model, BIDIRECTIONAL)
    mask = np.asarray(sample.mask, dtype=bool)
    start, stop = gap_of(mask)
    out = bidirectional_batch(model, sample.input[None], [(start, stop)]).value[0]
    return ImputationResult(np.where(mask, out, sample.input), mask.copy())
