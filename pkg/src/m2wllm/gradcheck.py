"""Central finite-difference checks of the analytic gradients.

Relative error is measured over the sampled entries as
``||analytic - numeric|| / max(||analytic||, ||numeric||, floor)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

FLOOR = 1e-12


@dataclass
class GradcheckResult:
    name: str
    rel_error: float
    n_entries: int
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rel_error) and self.rel_error < self.tol)


def numerical_grad(f: Callable[[], Tensor], t: Tensor, index, h: float = 1e-5) -> float:
    flat = t.data.reshape(-1)
    old = flat[index]
    with T.no_grad():
        flat[index] = old + h
        up = f().item()
        flat[index] = old - h
        down = f().item()
    flat[index] = old
    return (up - down) / (2 * h)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), FLOOR)
    return float(np.linalg.norm(a - n) / denom)


def check(name: str, f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
          max_entries: int | None = None, rng: np.random.Generator | None = None,
          tol: float = 1e-4) -> GradcheckResult:
    """Compare backward() against central differences for ``params``.

    With ``max_entries`` set, that many entries are drawn uniformly over all
    parameters instead of checking every entry.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("gradient checks need 64-bit tensors")
        p.grad = None
    with T.Tape():
        f().backward()
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_entries is not None and len(coords) > max_entries:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_entries, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    analytic = []
    numeric = []
    for i, j in coords:
        p = params[i]
        g = p.grad.reshape(-1)[j] if p.grad is not None else 0.0
        analytic.append(g)
        numeric.append(numerical_grad(f, p, j, h))
    for p in params:
        p.grad = None
    return GradcheckResult(name, relative_error(analytic, numeric), len(coords), tol)


def _rand(rng, *shape):
    return T.parameter(rng.standard_normal(shape))


def op_checks(seed: int = 0) -> list[GradcheckResult]:
    """One check per differentiable primitive, on random shapes up to 4x8x8."""
    rng = np.random.default_rng(seed)
    res = []
    with T.precision(64):
        w = rng.standard_normal((4, 8, 8))

        a, b = _rand(rng, 4, 8, 8), _rand(rng, 8, 6)
        res.append(check("matmul", lambda: (T.matmul(a, b) * w[..., :6]).sum(), [a, b]))
        a2, b2 = _rand(rng, 4, 3, 5), _rand(rng, 4, 5, 2)
        res.append(check("matmul_batched", lambda: (T.matmul(a2, b2) ** 2).sum(), [a2, b2]))
        x, y = _rand(rng, 4, 8, 8), _rand(rng, 8)
        res.append(check("add_broadcast", lambda: ((x + y) * w).sum(), [x, y]))
        res.append(check("mul_broadcast", lambda: ((x * y) * w).sum(), [x, y]))
        d = T.parameter(rng.uniform(1.0, 2.0, (8,)))
        res.append(check("div", lambda: ((x / d) * w).sum(), [x, d]))
        res.append(check("sub_pow", lambda: (((x - y) ** 3) * w).mean(), [x, y]))
        s = _rand(rng, 4, 8, 8)
        res.append(check("softmax_last", lambda: (T.softmax(s, -1) * w).sum(), [s]))
        res.append(check("softmax_axis1", lambda: (T.softmax(s, 1) * w).sum(), [s]))
        cs = _rand(rng, 4, 8, 8)
        res.append(check("causal_softmax", lambda: (T.causal_softmax(cs, 0.7) * w).sum(), [cs]))
        cr = _rand(rng, 4, 3, 8)
        res.append(check("causal_softmax_tail",
                         lambda: (T.causal_softmax(cr, 0.7) * w[:, :3]).sum(), [cr]))
        ln_x, g, bb = _rand(rng, 4, 8, 8), _rand(rng, 8), _rand(rng, 8)
        res.append(check("layer_norm", lambda: (T.layer_norm(ln_x, g, bb) * w).sum(), [ln_x, g, bb]))
        gx = _rand(rng, 4, 8, 8)
        res.append(check("gelu", lambda: (T.gelu(gx) * w).sum(), [gx]))
        lx, lw, lb = _rand(rng, 4, 8, 8), _rand(rng, 5, 8), _rand(rng, 5)
        res.append(check("linear", lambda: (T.linear(lx, lw, lb) ** 2).sum(), [lx, lw, lb]))
        rx = _rand(rng, 4, 8, 8)
        res.append(check("reshape_transpose",
                         lambda: (rx.transpose(0, 2, 1).reshape(4, 64) * w.reshape(4, 64)).sum(), [rx]))
        c1, c2 = _rand(rng, 4, 3, 8), _rand(rng, 4, 5, 8)
        res.append(check("concat", lambda: (T.concat([c1, c2], axis=1) * w).sum(), [c1, c2]))
        gi = _rand(rng, 4, 8, 8)
        res.append(check("getitem", lambda: (gi[:, 2:6, ::2] ** 2).sum(), [gi]))
        table = _rand(rng, 10, 8)
        ids = rng.integers(0, 10, size=(4, 8))
        res.append(check("embedding", lambda: (T.embedding(table, ids) * w).sum(), [table]))
        mx = _rand(rng, 4, 8, 8)
        mask = rng.random((8, 8)) < 0.3
        res.append(check("masked_fill", lambda: (T.masked_fill(mx, mask, 0.0) * w).sum(), [mx]))
        px = _rand(rng, 4, 8, 8)
        res.append(check("mse_loss", lambda: T.mse_loss(px, w), [px]))
        logits = _rand(rng, 4, 8, 8)
        tgt = rng.integers(0, 8, size=(4, 8))
        res.append(check("cross_entropy", lambda: T.cross_entropy(logits, tgt), [logits]))
        sx = _rand(rng, 4, 8, 8)
        res.append(check("sum_mean_axis", lambda: (sx.sum(axis=1) ** 2).mean() + sx.mean(axis=2).sum(), [sx]))
    return res


def component_checks(seed: int = 0) -> list[GradcheckResult]:
    """LoRA, semantic augmenter and backbone block on small configs."""
    from .backbone import BackboneConfig, init_seeded
    from .embedding import AugmenterConfig, SemanticAugmenter, augment
    from .lora import attach_adapters

    rng = np.random.default_rng(seed + 1)
    res = []
    with T.precision(64):
        bb = init_seeded(BackboneConfig(n_layer=2, d_llm=16, n_head=2, vocab_size=64,
                                        max_seq_len=32, seed=seed))
        ads = attach_adapters(bb, ("q", "v"), rank=2, alpha=4.0, seed=seed)
        for ad in ads:
            ad.B.data[:] = rng.standard_normal(ad.B.shape) * 0.1
        seq = _rand(rng, 2, 7, 16)
        w = rng.standard_normal((2, 7, 16))
        lora_params = [p for ad in ads for p in (ad.A, ad.B)]
        res.append(check("backbone_lora",
                         lambda: (bb.forward_embeddings(seq, causal=True) * w).sum(),
                         [seq] + lora_params, max_entries=80, rng=rng))

        aug = SemanticAugmenter(AugmenterConfig(d_m=12, heads=3, n_vm=8), l_p=4, d_llm=16,
                                n_v0=64, seed=seed)
        xp = rng.standard_normal((2, 3, 5, 4))
        w2 = rng.standard_normal((2, 3, 5, 16))
        res.append(check("semantic_augmenter",
                         lambda: (augment(xp, bb.E0, aug) * w2).sum(),
                         aug.trainable(), max_entries=120, rng=rng))
    return res


def model_check(seed: int = 0, n_params: int = 10) -> GradcheckResult:
    """End-to-end loss gradient on ``n_params`` random trainable entries of a tiny model."""
    from .config import tiny_config
    from .data import GeneratorConfig, generate_dataset
    from .model import ForecastModel

    rng = np.random.default_rng(seed + 2)
    with T.precision(64):
        cfg = tiny_config(seed=seed)
        model = ForecastModel(cfg.model)
        # the zero-initialized head would zero every upstream gradient
        model.head.weight.data[:] = rng.standard_normal(model.head.weight.shape) * 0.1
        for ad in model.adapters:
            ad.B.data[:] = rng.standard_normal(ad.B.shape) * 0.1
        ds = generate_dataset(GeneratorConfig(n_stations=cfg.model.n_stations, seed=seed),
                              n_samples=4, tau_h=cfg.model.tau_h, tau_f=cfg.model.tau_f,
                              tau_n=cfg.model.tau_n)
        batch = model.make_batch(ds, np.arange(3))
        return check("end_to_end", lambda: model.loss(batch), model.trainable_parameters(),
                     max_entries=n_params, rng=rng)


def run_suite(seed: int = 0) -> tuple[list[GradcheckResult], float]:
    """All checks; returns (results, elapsed seconds)."""
    t0 = time.perf_counter()
    results = op_checks(seed) + component_checks(seed) + [model_check(seed)]
    return results, time.perf_counter() - t0
