"""Low-rank adapters: effective weight W0 + (alpha/r) * B @ A with W0 frozen."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .nn import Linear, Module
from .tensor import Tensor

TARGETS = ("q", "k", "v", "o", "fc", "proj")


class LoraAdapter(Module):
    """Trainable bypass around a frozen linear map.

    ``A`` (r x n) starts as N(0, 0.01^2) noise and ``B`` (m x r) as zeros, so a
    fresh adapter leaves the wrapped map unchanged.
    """

    def __init__(self, base: Linear, rank: int, alpha: float, rng: np.random.Generator,
                 enforce_low_rank: bool = True):
        m, n = base.weight.shape
        limit = min(m, n) / 2 if enforce_low_rank else min(m, n)
        if rank < 1 or rank > limit:
            raise ContractError(f"LoRA rank {rank} outside [1, {limit:g}] for a {m}x{n} map")
        self._base = base
        self.rank = rank
        self.alpha = float(alpha)
        self.A = T.parameter(rng.standard_normal((rank, n)) * 0.01)
        self.B = T.parameter(np.zeros((m, rank)))

    @property
    def base(self) -> Linear:
        return self._base

    @property
    def W0(self) -> Tensor:
        return self._base.weight

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    @property
    def n_trainable(self) -> int:
        return self.A.size + self.B.size

    def __call__(self, x: Tensor) -> Tensor:
        return lora_forward(self, x)

    def merge(self) -> Tensor:
        return merge(self)


def lora_forward(ad: LoraAdapter, x: Tensor) -> Tensor:
    """``x W0^T + b + (alpha/r) x A^T B^T`` without forming ``B A``."""
    n = ad.W0.shape[1]
    if x.shape[-1] != n:
        raise DimensionError(f"LoRA input last dim {x.shape[-1]} != {n}")
    frozen = ad.base(x)
    low = T.linear(T.linear(x, ad.A), ad.B)
    return frozen + low * ad.scaling


def merge(ad: LoraAdapter) -> Tensor:
    """Dense W0 + (alpha/r) B A for inference export; the adapter is not modified."""
    return Tensor(ad.W0.data + ad.scaling * (ad.B.data @ ad.A.data), dtype=ad.W0.dtype)


def attach_adapters(backbone, targets: Iterable[str] = ("q", "v"), rank: int = 4,
                    alpha: float = 8.0, seed: int = 0) -> list[LoraAdapter]:
    """Wrap the named projections of every block with fresh adapters.

    Replaces any adapters already attached.  Returns them in (layer, target)
    order.
    """
    targets = tuple(targets)
    if not targets:
        raise ConfigError("lora.targets must name at least one projection")
    unknown = [t for t in targets if t not in TARGETS]
    if unknown:
        raise ConfigError(f"unknown LoRA target(s) {unknown}; choose from {list(TARGETS)}")
    rng = np.random.default_rng([seed, 0x10A])
    made = []
    for block in backbone.blocks:
        block.adapters = {}
        for t in targets:
            ad = LoraAdapter(block.projection(t), rank, alpha, rng)
            block.adapters[t] = ad
            made.append(ad)
    return made


def detach_adapters(backbone) -> None:
    for block in backbone.blocks:
        block.adapters = {}


def lora_parameter_count(n_layer: int, shapes: dict[str, tuple[int, int]], targets, rank: int) -> int:
    """Closed form sum of r(m+n) over adapted maps."""
    return n_layer * sum(rank * (shapes[t][0] + shapes[t][1]) for t in targets)
