"""Dense tensors with a small reverse-mode tape.

Values live in numpy arrays (float64 by default). Every op returns a new
:class:`Tensor`; when any input requires a gradient the op also records a
backward closure. :func:`gradients` replays the recorded graph in reverse
creation order, which fixes the accumulation order and makes gradients
bitwise reproducible.
"""
from __future__ import annotations

import itertools
from typing import Callable, Mapping, Sequence

import numpy as np

DTYPE = np.float64

_ids = itertools.count()


class TapeError(RuntimeError):
    """The loss is not connected to any recorded parameter."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward", "op", "id")

    def __init__(self, data, requires_grad: bool = False, *, dtype=None):
        self.data = np.asarray(data, dtype=dtype or DTYPE)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward = None
        self.op = "leaf"
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    # floating arrays keep their precision; everything else becomes DTYPE
    if isinstance(x, np.ndarray) and x.dtype.kind == "f":
        return Tensor(x, dtype=x.dtype)
    return Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap raw operands, giving constants the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.data.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.data.dtype), b
    return as_tensor(a), as_tensor(b)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    # NaN and Inf both propagate through a sum
    with np.errstate(invalid="ignore", over="ignore"):
        total = np.sum(data)
    if not np.isfinite(total):
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    out.id = next(_ids)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward = backward
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):  # _make reports non-finite output
        out = a.data / b.data

    def back(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), back, "div")


def _unary(x, value: np.ndarray, dvalue: Callable[[], np.ndarray], op: str) -> Tensor:
    def back(g):
        return (g * dvalue(),)

    return _make(value, (x,), back, op)


def relu(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.maximum(x.data, 0.0), lambda: (x.data > 0).astype(x.data.dtype), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _unary(x, y, lambda: y * (1.0 - y), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _unary(x, y, lambda: 1.0 - y * y, "tanh")


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _unary(x, y, lambda: y, "exp")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _unary(x, y, lambda: 0.5 / y, "sqrt")


def tabs(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.abs(x.data), lambda: np.sign(x.data), "abs")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, x.data * x.data, lambda: 2.0 * x.data, "square")


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    return _unary(x, x.data**p, lambda: p * x.data ** (p - 1), "power")


# ---------------------------------------------------------------- reductions

def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size // max(out.size, 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(out, (x,), back, "mean")


# ---------------------------------------------------------------- shape ops

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def back(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), back, "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def back(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(x.data, axes), (x,), back, "transpose")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(x.data[index]), (x,), back, "getitem")


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, back, "concat")


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([x.data for x in xs], axis=axis), xs, back, "stack")


# ---------------------------------------------------------------- contractions

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with ndim >= 2")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back, "matmul")


def einsum(spec: str, *operands) -> Tensor:
    """Explicit-output einsum (``'ij,jk->ik'``); no repeated index per operand."""
    ops = [as_tensor(x) for x in operands]
    inputs, output = spec.replace(" ", "").split("->")
    in_specs = inputs.split(",")
    if len(in_specs) != len(ops):
        raise ValueError(f"einsum spec {spec!r} expects {len(in_specs)} operands")
    for s in in_specs:
        if len(set(s)) != len(s):
            raise ValueError("repeated indices within one operand are not supported")

    def back(g):
        grads = []
        for i, s in enumerate(in_specs):
            if not ops[i].requires_grad:
                grads.append(None)
                continue
            others = [ops[k].data for k in range(len(ops)) if k != i]
            other_specs = [in_specs[k] for k in range(len(ops)) if k != i]
            present = set(output).union(*other_specs) if other_specs else set(output)
            kept = "".join(c for c in s if c in present)
            gi = np.einsum(",".join([output, *other_specs]) + "->" + kept, g, *others)
            if kept != s:
                # indices summed away inside operand i: gradient is constant along them
                shape = [ops[i].shape[j] if c in present else 1 for j, c in enumerate(s)]
                gi = np.broadcast_to(gi.reshape(shape), ops[i].shape).copy()
            grads.append(gi)
        return tuple(grads)

    return _make(np.einsum(spec, *[o.data for o in ops]), ops, back, "einsum")


# ---------------------------------------------------------------- composite kernels

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, (x,), back, "softmax")


def softmax_rows(m) -> Tensor:
    """Row-wise softmax of a matrix (or of the last axis of any tensor)."""
    return softmax(m, axis=-1)


def conv1d_same(signal, kernel) -> Tensor:
    """Stride-1 cross-correlation with zero "same" padding along the last axis.

    ``out[..., i] = sum_k signal[..., i + k - (L - 1) // 2] * kernel[..., k]``.
    Leading axes of ``signal`` and ``kernel`` broadcast against each other.
    """
    signal, kernel = as_tensor(signal), as_tensor(kernel)
    length = kernel.shape[-1]
    if length % 2 == 0:
        raise ValueError(f"filter length must be odd, got {length}")
    d = signal.shape[-1]
    half = (length - 1) // 2
    pad = [(0, 0)] * (signal.ndim - 1) + [(half, half)]
    padded = np.pad(signal.data, pad)
    # windows[..., i, k] = padded[..., i + k]
    windows = np.lib.stride_tricks.sliding_window_view(padded, length, axis=-1)
    out = np.matmul(windows, kernel.data[..., None])[..., 0]

    def back(g):
        gk = gs = None
        if kernel.requires_grad:
            gk = _unbroadcast(np.matmul(g[..., None, :], windows)[..., 0, :], kernel.shape)
        if signal.requires_grad:
            gpad = np.zeros(np.broadcast_shapes(padded.shape[:-1], g.shape[:-1]) + padded.shape[-1:])
            for k in range(length):
                gpad[..., k:k + d] += g * kernel.data[..., k:k + 1]
            gs = _unbroadcast(gpad[..., half:half + d], signal.shape)
        return gs, gk

    return _make(out, (signal, kernel), back, "conv1d_same")


# ---------------------------------------------------------------- gradients

def gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar ``loss`` for every named leaf.

    Leaves the loss does not depend on get zero gradients. Raises
    :class:`TapeError` when the loss depends on none of them.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    wanted = {p.id for p in params.values()}
    nodes: dict[int, Tensor] = {}
    stack_ = [loss]
    while stack_:
        node = stack_.pop()
        if node.id in nodes or not node.requires_grad:
            continue
        nodes[node.id] = node
        stack_.extend(node.parents)
    if not wanted & nodes.keys():
        raise TapeError("loss is not connected to any of the given parameters")

    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None) if nid not in wanted else grads.get(nid)
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return {
        name: grads.get(p.id, np.zeros_like(p.data)).reshape(p.shape)
        for name, p in params.items()
    }


def finite_diff_gradient(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``f`` at ``params``, one entry at a time."""
    base = {k: np.array(v, dtype=DTYPE, copy=True) for k, v in params.items()}
    out = {}
    for name, arr in base.items():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(base)
            flat[i] = orig - h
            fm = f(base)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                idx = [int(j) for j in np.unravel_index(i, arr.shape)]
                raise FloatingPointError(f"non-finite evaluation perturbing {name}{idx}")
            grad.reshape(-1)[i] = (fp - fm) / (2.0 * h)
        out[name] = grad
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| / max(1, |a|, |b|) over all entries."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def leaves(arrays: Mapping[str, np.ndarray], requires_grad: bool = True) -> dict[str, Tensor]:
    return {
        k: Tensor(v, requires_grad=requires_grad, dtype=np.asarray(v).dtype)
        for k, v in arrays.items()
    }
