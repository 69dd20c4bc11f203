"""Small reverse-mode automatic differentiation engine on top of numpy.

Every operation returns a new :class:`Tensor`. When gradient recording is on
and at least one input requires a gradient, the output remembers its parents
and a closure mapping the output gradient to input gradients. Each recorded
tensor gets a strictly increasing creation index, so sorting the reachable
graph by that index in descending order is a valid reverse topological order.

Broadcasting is deliberately limited: binary elementwise ops accept equal
shapes, a scalar, or a 1-D row vector matching the last axis.
"""
from __future__ import annotations

import contextlib
import itertools
import math
import threading

import numpy as np

DTYPE = np.float64

_counter = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """Raised when an operation produces NaN or infinite values."""


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_order", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._order = next(_counter)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr, op):
    # A single reduction catches any NaN/Inf; fall back to the exact test only on failure.
    with np.errstate(over="ignore", invalid="ignore"):
        total = float(np.sum(arr))
    if not math.isfinite(total) and not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")


def _result(data, parents, backward, op, check=True):
    if check:
        _check_finite(data, op)
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _binary_shapes(a, b, op):
    if a.shape == b.shape:
        return
    for big, small in ((a, b), (b, a)):
        if small.ndim == 0:
            return
        if small.ndim == 1 and big.ndim >= 1 and small.shape[0] == big.shape[-1]:
            return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    return grad.reshape(-1, shape[0]).sum(axis=0)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward, "mul")


def scale(x, c):
    """Multiply by a python constant."""
    c = float(c)

    def backward(g):
        return (g * c,)

    return _result(x.data * c, (x,), backward, "scale")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """GELU, tanh form ``0.5 x (1 + tanh(c (x + 0.044715 x^3)))``."""
    xd = x.data
    t = np.tanh(_GELU_C * (xd + 0.044715 * xd * xd * xd))

    def backward(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return _result(0.5 * xd * (1.0 + t), (x,), backward, "gelu")


# ---------------------------------------------------------------------------
# structural


def matmul(a, b):
    """Matrix product over the last two axes.

    ``b`` may be 2-D (shared across the leading batch axes of ``a``) or have
    the same leading axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
        b.ndim > 2 and a.shape[:-2] != b.shape[:-2]
    ):
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        k, n = bd.shape
        out = (ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (n,))

        def backward(g):
            g2 = g.reshape(-1, n)
            da = (g2 @ bd.T).reshape(ad.shape)
            db = ad.reshape(-1, k).T @ g2
            return da, db

    else:
        out = np.matmul(ad, bd)

        def backward(g):
            return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _result(out, (a, b), backward, "matmul")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return _result(np.transpose(x.data, axes), (x,), backward, "transpose", check=False)


def reshape(x, shape):
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from exc

    def backward(g):
        return (g.reshape(old),)

    return _result(out, (x,), backward, "reshape", check=False)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no tensors")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(
                f"concat: shapes {ref.shape} and {t.shape} differ off axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward, "concat", check=False)


def take(x, index):
    """Basic (slice/int) indexing with a scatter-back gradient."""
    shape = x.shape
    out = x.data[index]
    if isinstance(out, np.ndarray) and not np.shares_memory(out, x.data) and out.size:
        raise ShapeError("take: only basic slicing is supported; use gather_rows")

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _result(np.array(out, dtype=DTYPE), (x,), backward, "take", check=False)


def repeat_batch(x, batch):
    """Explicitly tile ``x`` along a new leading batch axis of size ``batch``."""

    def backward(g):
        return (g.sum(axis=0),)

    return _result(np.repeat(x.data[None], batch, axis=0), (x,), backward, "repeat_batch", check=False)


def gather_rows(table, ids):
    """Row lookup ``table[ids]`` for an integer id array of any shape."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("gather_rows: ids must be integers")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"gather_rows: index out of range for table with {n} rows")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _result(table.data[ids], (table,), backward, "gather_rows", check=False)


def tsum(x, axis=None):
    shape = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x, axis=None):
    count = x.size if axis is None else x.shape[axis]
    return scale(tsum(x, axis), 1.0 / count)


# ---------------------------------------------------------------------------
# fused numerics


def softmax(x, axis=-1, mask=None):
    """Max-shifted softmax; ``mask`` (bool, True = keep) zeroes excluded entries."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("degenerate attention row: every position is masked")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _result(p, (x,), backward, "softmax")


def layer_norm(x, gain, bias, eps=1e-5):
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last dim {d}"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gain.data

    def backward(g):
        dxhat = g * gd
        dx = rstd * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat = g.reshape(-1, d)
        return dx, (flat * xhat.reshape(-1, d)).sum(axis=0), flat.sum(axis=0)

    return _result(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


def log_softmax_np(z, axis=-1):
    m = z.max(axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def cross_entropy(logits, targets, ignore_id=None):
    """Mean negative log-likelihood over positions whose target is not ``ignore_id``.

    ``logits`` has shape (..., V); ``targets`` the matching leading shape.
    """
    targets = np.asarray(targets)
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    t = targets.reshape(-1)
    if t.shape[0] != flat.shape[0]:
        raise ShapeError(f"cross_entropy: {targets.shape} targets for logits {logits.shape}")
    keep = np.ones_like(t, dtype=bool) if ignore_id is None else t != ignore_id
    n = int(keep.sum())
    if n == 0:
        raise ValueError("empty loss: every target position is ignored")
    if t[keep].min() < 0 or t[keep].max() >= vocab:
        raise IndexError(f"cross_entropy: target id out of range for vocabulary of {vocab}")
    idx = np.nonzero(keep)[0]
    logp = log_softmax_np(flat[idx])
    loss = -logp[np.arange(n), t[idx]].sum() / n
    shape = logits.shape

    def backward(g):
        grad = np.zeros_like(flat)
        p = np.exp(logp)
        p[np.arange(n), t[idx]] -= 1.0
        grad[idx] = p * (float(g) / n)
        return (grad.reshape(shape),)

    return _result(np.asarray(loss), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf that requires it."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss is not connected to any tensor requiring a gradient")

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad and id(p) not in nodes)

    grads = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for t in sorted(nodes.values(), key=lambda n: n._order, reverse=True):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
