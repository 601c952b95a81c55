"""Adam with bias correction."""

from __future__ import annotations

import weakref
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class Adam:
    """In-place Adam over a fixed parameter list.

    Moment buffers live on the optimizer and persist across ``step`` calls.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"parameter {i} {p.shape} has no gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out


_functional_state: "weakref.WeakKeyDictionary[Tensor, list]" = weakref.WeakKeyDictionary()


def adam_step(params: Sequence[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Functional Adam update; moment buffers are kept per tensor between calls."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {i} {p.shape} has no gradient")
    for p in params:
        st = _functional_state.get(p)
        if st is None:
            st = _functional_state[p] = [0, np.zeros_like(p.data), np.zeros_like(p.data)]
        st[0] += 1
        t, m, v = st
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype, copy=False)
