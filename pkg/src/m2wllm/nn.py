"""Parameter containers built on :mod:`m2wllm.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Collects named parameters from attributes, lists and child modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False


def _walk(value, name):
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(value, dict):
        for k in sorted(value):
            yield from _walk(value[k], f"{name}.{k}")


def normal(rng: np.random.Generator, shape, std: float) -> Tensor:
    return Tensor(rng.standard_normal(shape) * std)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, std: float = 0.02,
                 bias: bool = True, zero: bool = False):
        w = np.zeros((n_out, n_in)) if zero else rng.standard_normal((n_out, n_in)) * std
        self.weight = T.parameter(w)
        self.bias = T.parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = T.parameter(np.ones(dim))
        self.bias = T.parameter(np.zeros(dim))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self._eps)
