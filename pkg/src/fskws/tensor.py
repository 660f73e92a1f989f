"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Primitives record a node on the active :class:`Tape` whenever one of their
inputs requires a gradient.  ``Tape.backward`` walks the nodes in reverse
append order and accumulates gradients into every participating tensor.

Storage defaults to float32.  :func:`wide_precision` switches newly created
tensors to float64, which the finite-difference oracle relies on.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels

_state = threading.local()


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def wide_precision():
    prev = default_dtype()
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def record_kinks(log: list):
    """Collect the branch pattern of every non-smooth primitive evaluated."""
    prev = getattr(_state, "kinks", None)
    _state.kinks = log
    try:
        yield log
    finally:
        _state.kinks = prev


def _note_kink(name: str, pattern: np.ndarray) -> None:
    log = getattr(_state, "kinks", None)
    if log is not None:
        log.append((name, np.packbits(np.asarray(pattern, dtype=bool).ravel()).tobytes()))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        # numpy float32/float64 data keeps its dtype; anything else takes the default
        if isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64):
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


@dataclass
class Node:
    op: str
    inputs: tuple
    output_id: int  # an id, not the tensor: keeps tensor <-> node acyclic
    backward: Callable
    index: int = 0


@dataclass
class Tape:
    """Append-only record of primitive applications for one training step."""

    nodes: list = field(default_factory=list)
    outputs: list = field(default_factory=list, repr=False)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def ops(self) -> list:
        return [n.op for n in self.nodes]

    def backward(self, loss: Tensor, wrt: Sequence[Tensor] = ()) -> dict:
        """Return ``{id(tensor): grad}`` and set ``.grad`` on every leaf.

        Leaves listed in ``wrt`` that did not take part in the loss receive
        zeros of their own shape.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        visited = 0
        for node in reversed(self.nodes):
            g = grads.pop(node.output_id, None)
            visited += 1
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise AssertionError(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t.node is None:
                    leaves[key] = t
        assert visited == len(self.nodes)
        out = {}
        for key, t in leaves.items():
            t.grad = grads[key].astype(t.data.dtype, copy=False)
            out[key] = t.grad
        for t in wrt:
            if id(t) not in out:
                t.grad = np.zeros_like(t.data)
                out[id(t)] = t.grad
        return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=default_dtype()))


def _pair(a, b) -> tuple:
    """Coerce two operands; a bare scalar or array adopts the other Tensor's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return _as_tensor(a), _as_tensor(b)


def _record(op: str, inputs: tuple, out_data: np.ndarray, backward: Callable) -> Tensor:
    out = Tensor(out_data)
    stack = _tape_stack()
    if stack and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        tape = stack[-1]
        out.requires_grad = True
        out.node = Node(op, inputs, id(out), backward, len(tape.nodes))
        tape.nodes.append(out.node)
        tape.outputs.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)
    return _record("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def residual_add(x, skip) -> Tensor:
    x, skip = _as_tensor(x), _as_tensor(skip)
    if x.shape != skip.shape:
        raise ValueError(f"residual_add: shape mismatch {x.shape} vs {skip.shape}")
    return _record("residual_add", (x, skip), x.data + skip.data, lambda g: (g, g))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _record("exp", (x,), y, lambda g: (g * y,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    return _record("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    y = np.sqrt(x.data)
    return _record("sqrt", (x,), y, lambda g: (g * 0.5 / y,))


def square(x) -> Tensor:
    x = _as_tensor(x)
    return _record("square", (x,), x.data * x.data, lambda g: (2.0 * g * x.data,))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    _note_kink("relu", mask)
    return _record("relu", (x,), np.where(mask, x.data, 0).astype(x.data.dtype, copy=False),
                   lambda g: (g * mask,))


def prelu(x, slopes) -> Tensor:
    """Per-channel PReLU; channels sit on the last axis."""
    x, slopes = _as_tensor(x), _as_tensor(slopes)
    if slopes.ndim != 1 or slopes.shape[0] != x.shape[-1]:
        raise ValueError(f"prelu: slopes {slopes.shape} do not match channels of {x.shape}")
    mask = x.data > 0
    _note_kink("prelu", mask)
    y = np.where(mask, x.data, slopes.data * x.data)

    def back(g):
        gx = np.where(mask, g, g * slopes.data)
        gs = np.where(mask, 0, g * x.data).reshape(-1, x.shape[-1]).sum(axis=0)
        return gx, gs.astype(slopes.data.dtype, copy=False)

    return _record("prelu", (x, slopes), y, back)


def clamp(x, lo: float | None = None, hi: float | None = None) -> Tensor:
    x = _as_tensor(x)
    y = np.clip(x.data, lo, hi)
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x.data >= lo
    if hi is not None:
        inside &= x.data <= hi
    _note_kink("clamp", inside)
    return _record("clamp", (x,), y, lambda g: (g * inside,))


def maximum(x, floor: float) -> Tensor:
    """max(x, floor) elementwise; the hinge of the triplet loss."""
    x = _as_tensor(x)
    mask = x.data > floor
    _note_kink("maximum", mask)
    y = np.where(mask, x.data, floor).astype(x.data.dtype, copy=False)
    return _record("maximum", (x,), y, lambda g: (g * mask,))


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    _note_kink("where", cond)
    return _record("where", (a, b), np.where(cond, a.data, b.data),
                   lambda g: (_unbroadcast(np.where(cond, g, 0), a.shape),
                              _unbroadcast(np.where(cond, 0, g), b.shape)))


# ------------------------------------------------------------------ reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    y = x.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record("sum", (x,), np.asarray(y), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise ValueError(f"mean: empty reduction over axes {axes} of shape {x.shape}")
    y = x.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _record("mean", (x,), np.asarray(y, dtype=x.data.dtype), back)


def max(x, axis: int) -> Tensor:  # noqa: A001
    """Max along one axis; ties resolve to the lowest index."""
    x = _as_tensor(x)
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    _note_kink("max", idx)
    y = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _record("max", (x,), y, back)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ValueError(f"softmax: empty axis {axis} for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record("softmax", (x,), y, back)


def l2_normalize(x, axis: int = -1, eps: float = 0.0) -> Tensor:
    x = _as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if np.any(norm <= eps):
        raise ValueError("l2_normalize: zero-norm vector")
    y = x.data / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _record("l2_normalize", (x,), y, back)


# ------------------------------------------------------------------- structure

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    y = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if a.ndim == 1:
            gb = np.outer(a.data, g)
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), y, back)


def transpose(x, axes: tuple | None = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    inv = np.argsort(axes)
    return _record("transpose", (x,), np.transpose(x.data, axes),
                   lambda g: (np.transpose(g, inv),))


def reshape(x, shape: tuple) -> Tensor:
    x = _as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _record("reshape", (x,), y, lambda g: (g.reshape(x.shape),))


def concatenate(xs: Sequence, axis: int = 0) -> Tensor:
    xs = tuple(_as_tensor(x) for x in xs)
    if not xs:
        raise ValueError("concatenate: no inputs")
    try:
        y = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ValueError(f"concatenate: shape mismatch {[x.shape for x in xs]}") from None
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _record("concatenate", xs, y, lambda g: tuple(np.split(g, cuts, axis=axis)))


# -------------------------------------------------------------- convolutions

def conv1d_time(x, w, dilation: int = 1) -> Tensor:
    """One filter shared by all channels, sliding along time.

    x: (B, T, D), w: (k,) -> (B, T - dilation*(k-1), D), no padding.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 1:
        raise ValueError(f"conv1d_time: expected (B,T,D) and (k,), got {x.shape} and {w.shape}")
    k = w.shape[0]
    t_out = x.shape[1] - dilation * (k - 1)
    if t_out < 1:
        raise ValueError(f"conv1d_time: filter {w.shape} too long for input {x.shape}")
    taps = np.stack([x.data[:, i * dilation:i * dilation + t_out, :] for i in range(k)], axis=1)
    y = np.einsum("k,bktd->btd", w.data, taps)

    def back(g):
        gw = np.einsum("btd,bktd->k", g, taps)
        gx = np.zeros_like(x.data)
        for i in range(k):
            gx[:, i * dilation:i * dilation + t_out, :] += w.data[i] * g
        return gx, gw

    return _record("conv1d_time", (x, w), y, back)


def conv2d(x, w, b=None, padding: tuple = (0, 0), dilation: tuple = (1, 1)) -> Tensor:
    """Stride-1 2-D convolution. x: (N, C, H, W), w: (F, C, kh, kw), b: (F,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: shape mismatch input {x.shape} vs weight {w.shape}")
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ph, pw = padding
    dh, dw = dilation
    h_out = h + 2 * ph - dh * (kh - 1)
    w_out = wd + 2 * pw - dw * (kw - 1)
    if h_out < 1 or w_out < 1:
        raise ValueError(f"conv2d: kernel {w.shape} with dilation {dilation} does not fit input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols = kernels.im2col(np.ascontiguousarray(xp), kh, kw, dh, dw, h_out, w_out)
    cols2 = cols.reshape(n * h_out * w_out, c * kh * kw)
    wmat = w.data.reshape(f, c * kh * kw)
    y = cols2 @ wmat.T
    if b is not None:
        b = _as_tensor(b)
        y = y + b.data
    y = np.ascontiguousarray(y.reshape(n, h_out, w_out, f).transpose(0, 3, 1, 2))
    inputs = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, f)
        gw = (g2.T @ cols2).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(n, h_out, w_out, c, kh, kw)
        gxp = kernels.col2im(np.ascontiguousarray(gcols), xp.shape[2], xp.shape[3], dh, dw)
        gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
        out = [np.ascontiguousarray(gx), gw]
        if b is not None:
            out.append(g2.sum(axis=0))
        return tuple(out)

    return _record("conv2d", inputs, y, back)


# -------------------------------------------------------------- fused losses

def cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the labelled entries. logits: (B, C)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(labels.shape[0])
    loss = -logp[rows, labels].mean()

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / labels.shape[0],)

    return _record("cross_entropy", (logits,), np.asarray(loss, dtype=logits.data.dtype), back)


def mse(a, b) -> Tensor:
    """Mean over every element of (a - b)**2."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    d = a.data - b.data
    n = d.size
    y = np.asarray((d * d).mean(), dtype=a.data.dtype)
    return _record("mse", (a, b), y, lambda g: (2.0 * g * d / n, -2.0 * g * d / n))


def take(x, idx: np.ndarray, axis: int = 0) -> Tensor:
    """Gather entries along ``axis``; repeated indices accumulate gradient."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    axis = axis % x.ndim

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None),) * axis + (idx,), g)
        return (gx,)

    return _record("take", (x,), np.take(x.data, idx, axis=axis), back)
