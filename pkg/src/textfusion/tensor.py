"""Dense float64 tensors with reverse-mode automatic differentiation.

Ops execute eagerly on numpy arrays. While a GradientTape is active, every
op whose inputs participate in differentiation appends one tape entry
holding a backward closure; ``backward(loss)`` replays the entries in
reverse topological order (which is simply recording order) and accumulates
gradients into ``Tensor.grad`` buffers.

Rank support is deliberately small: most ops accept any rank and act on the
last dimension; ``matmul`` accepts 2-d operands plus a stacked 3-d form so a
whole batch of windows can flow through one graph. Everything is float64.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, TapeError

_node_counter = itertools.count()
_active_tape: "GradientTape | None" = None

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """Dense n-d float64 value, optionally carrying a gradient buffer."""

    __slots__ = ("data", "grad", "node_id", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_counter)
        self.requires_grad = requires_grad
        self.tape: GradientTape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def tolist(self):
        return self.data.tolist()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return elementwise(self, _as_tensor(other), "add")

    def __sub__(self, other):
        return elementwise(self, _as_tensor(other), "sub")

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return elementwise(self, _as_tensor(other), "mul")

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class TapeEntry:
    __slots__ = ("op", "input_ids", "output", "backward_fn")

    def __init__(self, op: str, input_ids: tuple[int, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], None]):
        self.op = op
        self.input_ids = input_ids
        self.output = output
        self.backward_fn = backward_fn


class GradientTape:
    """Ordered op record for one forward pass (define-by-run).

    Confined to a single worker: nesting or sharing across threads is not
    supported. A tape is consumed by its first backward() call; rebuild the
    graph with a fresh forward pass before differentiating again.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.consumed = False

    def __enter__(self) -> "GradientTape":
        global _active_tape
        if _active_tape is not None:
            raise TapeError("a gradient tape is already active; tapes do not nest")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _active_tape
        _active_tape = None

    def _record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                backward_fn: Callable[[np.ndarray], None]) -> None:
        output.requires_grad = True
        output.tape = self
        self.entries.append(TapeEntry(op, tuple(t.node_id for t in inputs), output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward(); run a new forward pass")
        if loss.tape is not self:
            raise TapeError("loss was not produced under this tape (detached graph)")
        if loss.data.shape != ():
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        self.consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for entry in reversed(self.entries):
            out_grad = entry.output.grad
            if out_grad is None:
                continue
            entry.backward_fn(out_grad)


def backward(loss: Tensor) -> None:
    """Populate gradients of ``loss`` w.r.t. every participating leaf."""
    if loss.tape is None:
        raise TapeError("loss is not attached to any gradient tape (detached graph)")
    loss.tape.backward(loss)


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(grad, dtype=np.float64)
    else:
        t.grad = t.grad + grad


def _emit(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape
    if tape is not None and any(t.requires_grad for t in inputs):
        tape._record(op, inputs, out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# core ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports (m,k)@(k,n), (B,m,k)@(B,k,n), (B,m,k)@(k,n)."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} x {bd.shape}")
    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ShapeError(f"batched matmul shapes disagree: {ad.shape} x {bd.shape}")
    elif ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} x {bd.shape}")
    else:
        raise ShapeError(f"matmul supports rank-2/3 operands, got {ad.shape} x {bd.shape}")
    out = ad @ bd

    def back(g: np.ndarray) -> None:
        # dA = dC.B^T, dB = A^T.dC; the stacked form sums dB over the batch.
        _accumulate(a, g @ np.swapaxes(bd, -1, -2))
        if ad.ndim == 3 and bd.ndim == 2:
            _accumulate(b, np.tensordot(ad, g, axes=([0, 1], [0, 1])))
        else:
            _accumulate(b, np.swapaxes(ad, -1, -2) @ g)

    return _emit("matmul", (a, b), out, back)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last dimension, computed with max-subtraction."""
    ad = a.data
    if ad.ndim == 0 or ad.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim needs a trailing dimension, got shape {ad.shape}")
    shifted = ad - ad.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g: np.ndarray) -> None:
        inner = (g * out).sum(axis=-1, keepdims=True)
        _accumulate(a, out * (g - inner))

    return _emit("softmax_lastdim", (a,), out, back)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean, unit variance, then affine."""
    if eps <= 0:
        raise ShapeError(f"layer_norm eps must be positive, got {eps}")
    ad = a.data
    d = ad.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = ad.mean(axis=-1, keepdims=True)
    var = ((ad - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (ad - mu) * inv
    out = xhat * gain.data + bias.data

    def back(g: np.ndarray) -> None:
        lead = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))
        gh = g * gain.data
        _accumulate(a, inv * (gh - gh.mean(axis=-1, keepdims=True)
                              - xhat * (gh * xhat).mean(axis=-1, keepdims=True)))

    return _emit("layer_norm", (a, gain, bias), out, back)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    """Arithmetic mean along ``axis``; backward spreads 1/len uniformly."""
    if not 0 <= axis < a.ndim:
        raise ShapeError(f"mean_axis axis {axis} out of range for shape {a.shape}")
    n = a.shape[axis]
    out = a.data.mean(axis=axis)

    def back(g: np.ndarray) -> None:
        _accumulate(a, np.broadcast_to(np.expand_dims(g / n, axis), a.shape))

    return _emit("mean_axis", (a,), out, back)


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Elementwise add/sub/mul; ``b`` may be a trailing vector of ``a``."""
    if kind not in ("add", "sub", "mul"):
        raise ShapeError(f"unknown elementwise kind {kind!r}")
    ad, bd = a.data, b.data
    trailing = bd.ndim == 1 and ad.ndim >= 1 and bd.shape[0] == ad.shape[-1]
    if ad.shape != bd.shape and not trailing:
        raise ShapeError(f"elementwise {kind} shapes incompatible: {ad.shape} vs {bd.shape}")
    if kind == "add":
        out = ad + bd
    elif kind == "sub":
        out = ad - bd
    else:
        out = ad * bd

    def reduce_to_b(g: np.ndarray) -> np.ndarray:
        if bd.shape == ad.shape:
            return g
        return g.sum(axis=tuple(range(g.ndim - 1)))

    def back(g: np.ndarray) -> None:
        if kind == "add":
            _accumulate(a, g)
            _accumulate(b, reduce_to_b(g))
        elif kind == "sub":
            _accumulate(a, g)
            _accumulate(b, reduce_to_b(-g))
        else:
            _accumulate(a, g * bd)
            _accumulate(b, reduce_to_b(g * ad))

    return _emit(f"elementwise_{kind}", (a, b), out, back)


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def activation(a: Tensor, kind: str) -> Tensor:
    """Pointwise nonlinearity, ``relu`` or ``gelu``.

    gelu is the tanh approximation:
        gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
    """
    ad = a.data
    if kind == "relu":
        out = np.maximum(ad, 0.0)

        def back(g: np.ndarray) -> None:
            _accumulate(a, g * (ad > 0.0))

    elif kind == "gelu":
        u = _GELU_C * (ad + _GELU_A * ad ** 3)
        t = np.tanh(u)
        out = 0.5 * ad * (1.0 + t)

        def back(g: np.ndarray) -> None:
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * ad ** 2)
            _accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * ad * (1.0 - t ** 2) * du))

    else:
        raise ShapeError(f"unknown activation kind {kind!r}")
    return _emit(f"activation_{kind}", (a,), out, back)


def relu(a: Tensor) -> Tensor:
    return activation(a, "relu")


def gelu(a: Tensor) -> Tensor:
    return activation(a, "gelu")


def absolute(a: Tensor) -> Tensor:
    out = np.abs(a.data)

    def back(g: np.ndarray) -> None:
        _accumulate(a, g * np.sign(a.data))

    return _emit("absolute", (a,), out, back)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not differentiated w.r.t. ``c``)."""
    out = a.data * c

    def back(g: np.ndarray) -> None:
        _accumulate(a, g * c)

    return _emit("scale", (a,), out, back)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def back(g: np.ndarray) -> None:
        _accumulate(a, np.full(a.shape, float(g), dtype=np.float64))

    return _emit("sum_all", (a,), out, back)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = np.asarray(a.data.mean())

    def back(g: np.ndarray) -> None:
        _accumulate(a, np.full(a.shape, float(g) / n, dtype=np.float64))

    return _emit("mean_all", (a,), out, back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    out = a.data.reshape(shape)

    def back(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _emit("reshape", (a,), out, back)


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"transpose_last2 needs rank >= 2, got shape {a.shape}")
    out = np.swapaxes(a.data, -1, -2)

    def back(g: np.ndarray) -> None:
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _emit("transpose_last2", (a,), out, back)


def slice_lastdim(a: Tensor, start: int, stop: int) -> Tensor:
    d = a.shape[-1]
    if not (0 <= start < stop <= d):
        raise ShapeError(f"slice_lastdim [{start}:{stop}] invalid for last dim {d}")
    out = a.data[..., start:stop]

    def back(g: np.ndarray) -> None:
        full = np.zeros(a.shape, dtype=np.float64)
        full[..., start:stop] = g
        _accumulate(a, full)

    return _emit("slice_lastdim", (a,), out, back)


def slice_axis0(a: Tensor, start: int, stop: int) -> Tensor:
    n = a.shape[0]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_axis0 [{start}:{stop}] invalid for leading dim {n}")
    out = a.data[start:stop]

    def back(g: np.ndarray) -> None:
        full = np.zeros(a.shape, dtype=np.float64)
        full[start:stop] = g
        _accumulate(a, full)

    return _emit("slice_axis0", (a,), out, back)


def concat_lastdim(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_lastdim needs at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat_lastdim leading shapes differ: {lead} vs {p.shape[:-1]}")
    widths = [p.shape[-1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)

    def back(g: np.ndarray) -> None:
        offset = 0
        for p, w in zip(parts, widths):
            _accumulate(p, g[..., offset:offset + w])
            offset += w

    return _emit("concat_lastdim", tuple(parts), out, back)


def expand_batch(a: Tensor, batch: int) -> Tensor:
    """Tile ``a`` along a new leading batch axis; backward sums it away."""
    if batch < 1:
        raise ShapeError(f"expand_batch needs batch >= 1, got {batch}")
    out = np.broadcast_to(a.data, (batch,) + a.shape)

    def back(g: np.ndarray) -> None:
        _accumulate(a, g.sum(axis=0))

    return _emit("expand_batch", (a,), out, back)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; at the default rate 0 it is an exact no-op."""
    if rate <= 0.0:
        return a
    if not rate < 1.0:
        raise ShapeError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ShapeError("dropout with rate > 0 requires an explicit rng")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    out = a.data * mask

    def back(g: np.ndarray) -> None:
        _accumulate(a, g * mask)

    return _emit("dropout", (a,), out, back)
