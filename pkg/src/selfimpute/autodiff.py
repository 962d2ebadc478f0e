"""Tensor-level reverse-mode differentiation.

Operations executed inside an active :class:`Tape` are recorded in order;
:func:`backward` walks the record in reverse and accumulates exact
vector-Jacobian products. Outside a tape the same functions run as plain
numpy code, which is what inference uses.

    >>> w = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     y = w * w
    >>> float(backward(tape, y)[w])
    6.0
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


class Op:
    """One recorded primitive: ``output = fn(*inputs)``."""

    __slots__ = ("name", "inputs", "output", "fn", "vjp")

    def __init__(self, name, inputs, output, fn, vjp):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.fn = fn
        self.vjp = vjp


class Tape:
    """Ordered, acyclic record of the primitives applied to tracked tensors."""

    def __init__(self):
        self.ops: list[Op] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.ops)

    def replay(self) -> bool:
        """Recompute every recorded op from its inputs; True if all outputs match bit-exactly."""
        for op in self.ops:
            fresh = op.fn(*(t.value for t in op.inputs))
            if not np.array_equal(fresh, op.output.value):
                return False
        return True


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(name: str, fn: Callable, vjp: Callable, *inputs) -> Tensor:
    inputs = tuple(as_tensor(t) for t in inputs)
    out = Tensor(fn(*(t.value for t in inputs)))
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].ops.append(Op(name, inputs, out, fn, vjp))
    return out


def backward(tape: Tape, output: Tensor) -> dict:
    """Gradients of scalar ``output`` w.r.t. every tracked leaf tensor on ``tape``.

    Leaf tensors also receive the result in ``.grad``.
    """
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    produced = {id(op.output) for op in tape.ops}
    grads = {id(output): np.ones_like(output.value)}
    leaves: dict[int, Tensor] = {}
    for op in reversed(tape.ops):
        g = grads.pop(id(op.output), None)
        if g is None:
            continue
        in_grads = op.vjp(g, op.output.value, *(t.value for t in op.inputs))
        for t, gi in zip(op.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = t
    result = {}
    for key, t in leaves.items():
        t.grad = grads[key]
        result[t] = grads[key]
    return result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    return _apply(
        "add", np.add,
        lambda g, out, x, y: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
        a, b,
    )


def sub(a, b) -> Tensor:
    return _apply(
        "sub", np.subtract,
        lambda g, out, x, y: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)),
        a, b,
    )


def mul(a, b) -> Tensor:
    return _apply(
        "mul", np.multiply,
        lambda g, out, x, y: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        a, b,
    )


def neg(a) -> Tensor:
    return _apply("neg", np.negative, lambda g, out, x: (-g,), a)


def exp(a) -> Tensor:
    return _apply("exp", np.exp, lambda g, out, x: (g * out,), a)


def tanh(a) -> Tensor:
    return _apply("tanh", np.tanh, lambda g, out, x: (g * (1.0 - out * out),), a)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu(x):
    return x * _sigmoid(x)


def _silu_vjp(g, out, x):
    s = _sigmoid(x)
    return (g * (s + x * s * (1.0 - s)),)


def silu(a) -> Tensor:
    """Sigmoid-weighted linear unit ``x * sigmoid(x)``."""
    return _apply("silu", _silu, _silu_vjp, a)


def absolute(a) -> Tensor:
    # np.sign(0) == 0 gives the zero subgradient at the kink
    return _apply("abs", np.abs, lambda g, out, x: (g * np.sign(x),), a)


def where(mask: np.ndarray, a, b) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    return _apply(
        "where",
        lambda x, y: np.where(mask, x, y),
        lambda g, out, x, y: (
            _unbroadcast(np.where(mask, g, 0.0), x.shape),
            _unbroadcast(np.where(mask, 0.0, g), y.shape),
        ),
        a, b,
    )


# reductions ----------------------------------------------------------------

def total(a, axis: Optional[int] = None) -> Tensor:
    if axis is None:
        return _apply("sum", np.sum, lambda g, out, x: (np.broadcast_to(g, x.shape),), a)
    return _apply(
        "sum",
        lambda x: np.sum(x, axis=axis),
        lambda g, out, x: (np.broadcast_to(np.expand_dims(g, axis), x.shape),),
        a,
    )


def mean(a) -> Tensor:
    return _apply(
        "mean", np.mean, lambda g, out, x: (np.broadcast_to(g / x.size, x.shape),), a
    )


def reshape(a, shape: tuple) -> Tensor:
    return _apply(
        "reshape",
        lambda x: np.reshape(x, shape),
        lambda g, out, x: (np.reshape(g, x.shape),),
        a,
    )


# gather / scatter along the time axis ---------------------------------------

def take(a, index: Sequence[int]) -> Tensor:
    """Gather along the last axis."""
    index = np.asarray(index, dtype=np.int64)

    def vjp(g, out, x):
        gx = np.zeros_like(x)
        np.add.at(gx, (..., index), g)
        return (gx,)

    return _apply("take", lambda x: np.take(x, index, axis=-1), vjp, a)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    def fn(*xs):
        return np.concatenate(xs, axis=axis)

    def vjp(g, out, *xs):
        bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return tuple(np.split(g, bounds, axis=axis))

    return _apply("concat", fn, vjp, *tensors)


def pad_edge(a, left: int, right: int) -> Tensor:
    """Replicate the first/last timestep ``left``/``right`` times."""

    def fn(x):
        if left == 0 and right == 0:
            return x.copy()
        return np.pad(x, [(0, 0)] * (x.ndim - 1) + [(left, right)], mode="edge")

    def vjp(g, out, x):
        T = x.shape[-1]
        gx = g[..., left:left + T].copy()
        gx[..., 0] += g[..., :left].sum(axis=-1)
        gx[..., -1] += g[..., left + T:].sum(axis=-1)
        return (gx,)

    return _apply("pad_edge", fn, vjp, a)


# learned linear maps ---------------------------------------------------------

def _conv1d(x, w, b):
    windows = sliding_window_view(x, w.shape[-1], axis=-1)  # (B, Cin, T, K)
    out = np.tensordot(windows, w, axes=([1, 3], [1, 2]))  # (B, T, Cout)
    return out.transpose(0, 2, 1) + b[None, :, None]


def _conv1d_vjp(g, out, x, w, b):
    K = w.shape[-1]
    T = g.shape[-1]
    windows = sliding_window_view(x, K, axis=-1)
    gw = np.tensordot(g, windows, axes=([0, 2], [0, 2]))  # (Cout, Cin, K)
    gx = np.zeros_like(x)
    for k in range(K):
        gx[..., k:k + T] += np.matmul(w[:, :, k].T, g)
    return gx, gw, g.sum(axis=(0, 2))


def conv1d(x, w, b) -> Tensor:
    """Valid cross-correlation: ``x`` (B, Cin, T), ``w`` (Cout, Cin, K), ``b`` (Cout,)."""
    return _apply("conv1d", _conv1d, _conv1d_vjp, x, w, b)


def _time_affine_vjp(g, out, h, W, b):
    g2 = g.reshape(-1, g.shape[-1])
    h2 = h.reshape(-1, h.shape[-1])
    return g @ W, g2.T @ h2, g2.sum(axis=0)


def time_affine(h, W, b) -> Tensor:
    """``out[..., o] = sum_t h[..., t] * W[o, t] + b[o]``."""
    return _apply("time_affine", lambda h, W, b: h @ W.T + b, _time_affine_vjp, h, W, b)
