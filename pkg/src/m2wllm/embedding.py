"""Series -> LLM embeddings: instance norm, patching, token mapper, cross-attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import INIT_STD
from .errors import ConfigError, ContractError
from .nn import Linear, Module
from .tensor import Tensor


# --------------------------------------------------------------------------
# instance normalization


@dataclass
class NormStats:
    """Per-channel statistics over the time axis, shaped (..., 1) for broadcasting."""

    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-5


def instance_normalize(x: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, NormStats]:
    """Standardize the last (time) axis of every channel of every sample.

    Uses the population standard deviation, floored at ``eps`` so constant
    channels map to zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ContractError("instance_normalize needs at least one time step")
    mean = x.mean(axis=-1, keepdims=True)
    std = np.maximum(x.std(axis=-1, keepdims=True), eps)
    return (x - mean) / std, NormStats(mean, std, eps)


def denormalize(y, stats: NormStats) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) * stats.std + stats.mean


# --------------------------------------------------------------------------
# patching


@dataclass(frozen=True)
class PatchConfig:
    l_p: int = 16
    s: int = 8

    def __post_init__(self):
        if self.l_p < 1 or self.s < 1:
            raise ConfigError(f"patch length and stride must be >= 1, got l_p={self.l_p}, s={self.s}")


def patch_count(tau: int, l_p: int, s: int) -> int:
    """ceil((tau - l_p) / s) + 1."""
    if l_p > tau:
        raise ContractError(f"patch length {l_p} exceeds series length {tau}")
    return -(-(tau - l_p) // s) + 1


def patch_indices(tau: int, cfg: PatchConfig) -> np.ndarray:
    """(P, l_p) source indices; an overrunning last patch repeats index tau-1."""
    p = patch_count(tau, cfg.l_p, cfg.s)
    idx = np.arange(p)[:, None] * cfg.s + np.arange(cfg.l_p)[None, :]
    return np.minimum(idx, tau - 1)


def make_patches(x, cfg: PatchConfig) -> np.ndarray:
    """(..., tau) -> (..., P, l_p) with replicate-last padding of the final patch."""
    x = np.asarray(x)
    return x[..., patch_indices(x.shape[-1], cfg)]


# --------------------------------------------------------------------------
# semantic augmenter


@dataclass(frozen=True)
class AugmenterConfig:
    d_m: int = 64
    heads: int = 4
    n_vm: int = 100

    @property
    def d_head(self) -> int:
        return self.d_m // self.heads


def _fan_in(rng, n_out, n_in):
    return rng.standard_normal((n_out, n_in)) / math.sqrt(n_in)


class SemanticAugmenter(Module):
    """Patch embedder, token mapper and multi-head cross-attention onto E_M.

    Queries come from the embedded patches, keys and values from the mapped
    vocabulary ``E_M = M @ E0``.  The per-head projections are stored stacked
    column-wise, so head ``i`` uses columns ``i*d_H:(i+1)*d_H``.

    The token mapper is scaled by ``1 / (sqrt(N_v0) * e0_std)`` so that rows of
    ``E_M`` start with unit-scale entries; at the plain fan-in scale they
    inherit E0's small init and the attention starts out flat.
    """

    def __init__(self, cfg: AugmenterConfig, l_p: int, d_llm: int, n_v0: int, seed: int = 0,
                 e0_std: float = INIT_STD):
        if cfg.heads < 1 or cfg.d_head < 1:
            raise ConfigError(f"aug.heads={cfg.heads} leaves no width per head for d_m={cfg.d_m}")
        if cfg.n_vm < 1 or cfg.n_vm > n_v0 / 4:
            raise ConfigError(f"aug.n_vm={cfg.n_vm} must be in [1, N_v0/4={n_v0 / 4:g}]")
        rng = np.random.default_rng([seed, 0xA06, l_p])
        self.cfg = cfg
        width = cfg.heads * cfg.d_head
        self.patch_embedder = Linear(l_p, cfg.d_m, rng, std=1 / math.sqrt(l_p))
        self.token_mapper = T.parameter(_fan_in(rng, cfg.n_vm, n_v0) / e0_std)
        self.w_q = T.parameter(_fan_in(rng, width, cfg.d_m))
        self.w_k = T.parameter(_fan_in(rng, width, d_llm))
        self.w_v = T.parameter(_fan_in(rng, width, d_llm))
        self.out = Linear(width, d_llm, rng, std=1 / math.sqrt(width))

    def __call__(self, x_p, E0: Tensor) -> Tensor:
        return augment(x_p, E0, self)


def map_tokens(E0: Tensor, mapper: Tensor) -> Tensor:
    """E_M = M @ E0; E0 stays frozen, M receives the gradient."""
    return T.matmul(mapper, E0)


def augment(x_p, E0: Tensor, aug: SemanticAugmenter, return_attention: bool = False):
    """(..., P, l_p) patches -> (..., P, d_llm) augmented embeddings."""
    x_p = T.as_tensor(x_p)
    cfg = aug.cfg
    h, dh = cfg.heads, cfg.d_head
    xh = aug.patch_embedder(x_p)
    lead = xh.shape[:-1]
    rows = int(np.prod(lead))
    e_m = map_tokens(E0, aug.token_mapper)
    q = T.linear(xh, aug.w_q).reshape(rows, h, dh).transpose(1, 0, 2)
    k = T.linear(e_m, aug.w_k).reshape(cfg.n_vm, h, dh).transpose(1, 2, 0)
    v = T.linear(e_m, aug.w_v).reshape(cfg.n_vm, h, dh).transpose(1, 0, 2)
    att = T.softmax(T.matmul(q, k) * (1.0 / math.sqrt(dh)), axis=-1)
    z = T.matmul(att, v).transpose(1, 0, 2).reshape(*lead, h * dh)
    out = aug.out(z)
    if return_attention:
        return out, att.data.transpose(1, 0, 2).reshape(*lead, h, cfg.n_vm)
    return out


class LinearPatchEmbedder(Module):
    """Plain l_p -> d_llm projection used when the augmenter is ablated."""

    def __init__(self, l_p: int, d_llm: int, seed: int = 0):
        rng = np.random.default_rng([seed, 0x11E, l_p])
        self.proj = Linear(l_p, d_llm, rng, std=1 / math.sqrt(l_p))

    def __call__(self, x_p, E0: Tensor | None = None) -> Tensor:
        return self.proj(T.as_tensor(x_p))
