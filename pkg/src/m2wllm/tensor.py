"""Dense tensors with tape-based reverse-mode differentiation.

Operations on tensors that require gradients are appended to the active
:class:`Tape` of the calling thread.  ``Tensor.backward`` replays that tape in
exact reverse recording order, accumulating into ``.grad`` of every leaf
tensor with ``requires_grad=True``.  Gradients accumulate across calls until
``zero_grad`` is called.

Precision is global: 64-bit floats for gradient checking, 32-bit for
training (see :func:`set_precision`).
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError

_DTYPE = np.float64
_local = threading.local()


def set_precision(bits: int) -> None:
    """Select the floating point width (32 or 64) of newly created tensors."""
    global _DTYPE
    if bits == 64:
        _DTYPE = np.float64
    elif bits == 32:
        _DTYPE = np.float32
    else:
        raise ContractError(f"precision must be 32 or 64, got {bits}")


def get_dtype():
    return _DTYPE


@contextmanager
def precision(bits: int):
    prev = 64 if _DTYPE == np.float64 else 32
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(prev)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Confined to the thread that created it.  Use as a context manager to make
    it the recording target::

        with Tape():
            loss = model_loss(batch)
            loss.backward()

    Leaving the context releases the recorded graph (tensors and their nodes
    reference each other, so this frees activations without waiting for the
    cycle collector); call ``backward`` inside the block.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        """Drop every recorded node and unlink it from its output tensor."""
        for node in self.nodes:
            out = node.out
            out._node = None
            out._tape = None
            node.out = node.inputs = node.backward = None
        self.nodes.clear()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()
        self.clear()


def _stack() -> list:
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = [Tape()]
    return st


def current_tape() -> Tape:
    return _stack()[-1]


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    """A dense array plus the bookkeeping needed for differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ContractError(f"tensor dims must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self._tape: Tape | None = None

    # -- basic properties
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- differentiation
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if self.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss is not connected to any tensor that requires grad")
        seed = np.ones_like(self.data)
        if self._node is None:
            _accumulate(self, seed)
            return
        grads = {id(self): seed}
        for node in reversed(self._tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if inp._node is None:
                    _accumulate(inp, gi)
                else:
                    prev = grads.get(id(inp))
                    grads[id(inp)] = gi if prev is None else prev + gi

    # -- operators
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

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.shape:
        g = _unbroadcast(g, t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: Sequence, backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out._tape = None
    out.requires_grad = grad_enabled() and any(
        isinstance(t, Tensor) and t.requires_grad for t in inputs
    )
    if out.requires_grad:
        tape = current_tape()
        out._node = _Node(out, tuple(inputs), backward)
        out._tape = tape
        tape.nodes.append(out._node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _data(x):
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (int, float)):
        return x  # python scalars stay weakly typed
    return np.asarray(x, dtype=_DTYPE)


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad + bd
    return _result(out, (a, b), lambda g: (_unbroadcast(g, np.shape(ad)), _unbroadcast(g, np.shape(bd))))


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad - bd
    return _result(out, (a, b), lambda g: (_unbroadcast(g, np.shape(ad)), -_unbroadcast(g, np.shape(bd))))


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad * bd

    def backward(g):
        return _unbroadcast(g * bd, np.shape(ad)), _unbroadcast(g * ad, np.shape(bd))

    return _result(out, (a, b), backward)


def div(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad / bd

    def backward(g):
        return _unbroadcast(g / bd, np.shape(ad)), _unbroadcast(-g * ad / (bd * bd), np.shape(bd))

    return _result(out, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    out = ad ** exponent
    return _result(out, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    xd = x.data
    c = math.sqrt(2.0 / math.pi)
    th = xd * xd
    th *= xd
    th *= 0.044715
    th += xd
    th *= c
    np.tanh(th, out=th)
    out = th + 1.0
    out *= xd
    out *= 0.5

    return _result(out, (x,), lambda g: (_kernels.gelu_bwd(g, xd, th),))


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant (no gradient there)."""
    keep = ~np.asarray(mask, dtype=bool)
    out = np.where(keep, x.data, x.data.dtype.type(value))
    return _result(out, (x,), lambda g: (_unbroadcast(g * keep, x.shape),))


# --------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return _result(out, (x,), lambda g: (g.transpose(inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    arrays = [_data(t) for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(tensors), backward)


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    fancy = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        gx = np.zeros_like(x.data)
        if fancy:
            np.add.at(gx, idx, g)
        else:
            gx[idx] = g
        return (gx,)

    return _result(out, (x,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"token id out of range [0, {table.shape[0]}): min {ids.min()}, max {ids.max()}"
        )
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(out, (table,), backward)


# --------------------------------------------------------------------------
# reductions


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _result(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / n)


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes with broadcasting."""
    ad, bd = _data(a), _data(b)
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    try:
        np.broadcast_shapes(ad.shape[:-2], bd.shape[:-2])
    except ValueError:
        raise DimensionError(
            f"matmul batch dims not broadcastable: {ad.shape} @ {bd.shape}"
        ) from None
    out = ad @ bd

    def backward(g):
        if bd.ndim == 2 and ad.ndim > 2:
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    xd, wd = x.data, weight.data
    if xd.shape[-1] != wd.shape[1]:
        raise DimensionError(f"linear shape mismatch: input {xd.shape}, weight {wd.shape}")
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd if x.requires_grad else None
        gw = g2.T @ xd.reshape(-1, xd.shape[-1]) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _result(out, inputs, backward)


# --------------------------------------------------------------------------
# normalizations and losses


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax axis {axis} invalid for shape {x.shape}")
    axis = axis % x.ndim
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        ym = np.moveaxis(y, axis, -1)
        gm = np.moveaxis(g, axis, -1)
        shp = ym.shape
        dx = _kernels.softmax_bwd(ym.reshape(-1, shp[-1]), gm.reshape(-1, shp[-1]))
        return (np.moveaxis(dx.reshape(shp), -1, axis),)

    return _result(y, (x,), backward)


def causal_softmax(x: Tensor, scale: float = 1.0) -> Tensor:
    """softmax(scale * x) over the last axis with future positions masked.

    ``x`` is (..., m, n) attention scores with ``m <= n``; the ``m`` queries
    are the last ``m`` of the ``n`` key positions, so row ``i`` attends to
    columns ``<= n - m + i``.  With ``m == n`` this is the usual lower
    triangle.  Equivalent to ``softmax(masked_fill(x * scale, mask, -inf))``.
    """
    if x.ndim < 2 or x.shape[-2] > x.shape[-1]:
        raise DimensionError(f"causal_softmax needs (..., m, n) with m <= n, got {x.shape}")
    shp = x.shape
    m, n = shp[-2:]
    y = _kernels.causal_softmax_fwd(x.data.reshape(-1, m, n), scale)

    def backward(g):
        return (_kernels.causal_softmax_bwd(y, g.reshape(-1, m, n), scale).reshape(shp),)

    return _result(y.reshape(shp), (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    k = x.shape[-1]
    if gain.shape != (k,) or bias.shape != (k,):
        raise DimensionError(
            f"layer_norm gain/bias {gain.shape}/{bias.shape} do not match last dim {k}"
        )
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    x2 = x.data.reshape(-1, k)
    out, xhat, rstd = _kernels.layer_norm_fwd(x2, gain.data, bias.data, eps)

    def backward(g):
        dx, dg, db = _kernels.layer_norm_bwd(g.reshape(-1, k), xhat, rstd, gain.data)
        return dx.reshape(x.shape), dg, db

    return _result(out.reshape(x.shape), (x, gain, bias), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    t = _data(target)
    diff = pred.data - t
    out = np.asarray((diff * diff).mean())
    n = diff.size
    return _result(out, (pred,), lambda g: (g * 2.0 * diff / n,))


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``."""
    ld = logits.data
    v = ld.shape[-1]
    flat = ld.reshape(-1, v)
    tg = np.asarray(targets).reshape(-1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = tg.shape[0]
    out = np.asarray(-logp[np.arange(n), tg].mean())

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), tg] -= 1.0
        return ((g / n) * p.reshape(ld.shape),)

    return _result(out, (logits,), backward)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
