"""Seeded miniature decoder-only transformer standing in for a pre-trained LM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .nn import LayerNorm, Linear, Module
from .optim import Adam
from .tensor import Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class BackboneConfig:
    n_layer: int = 4
    d_llm: int = 64
    n_head: int = 4
    vocab_size: int = 1024
    max_seq_len: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.d_llm % self.n_head:
            raise ConfigError(f"d_llm={self.d_llm} not divisible by n_head={self.n_head}")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2 (pad and unknown are reserved)")
        if self.n_layer < 0 or self.max_seq_len < 1:
            raise ConfigError("n_layer must be >= 0 and max_seq_len >= 1")


class Block(Module):
    """Pre-norm block: x + attn(ln1(x)), then x + mlp(ln2(x))."""

    def __init__(self, d: int, n_head: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.q = Linear(d, d, rng, INIT_STD)
        self.k = Linear(d, d, rng, INIT_STD)
        self.v = Linear(d, d, rng, INIT_STD)
        self.o = Linear(d, d, rng, INIT_STD)
        self.ln2 = LayerNorm(d)
        self.fc = Linear(d, 4 * d, rng, INIT_STD)
        self.proj = Linear(4 * d, d, rng, INIT_STD)
        self._n_head = n_head
        self._adapters: dict = {}

    @property
    def adapters(self) -> dict:
        return self._adapters

    @adapters.setter
    def adapters(self, value: dict) -> None:
        self._adapters = value

    def projection(self, name: str) -> Linear:
        return getattr(self, name)

    def _map(self, name: str, x: Tensor) -> Tensor:
        ad = self._adapters.get(name)
        return ad(x) if ad is not None else getattr(self, name)(x)

    def attention(self, x: Tensor, causal: bool, n_query: int | None = None) -> Tensor:
        """Self-attention; with ``n_query`` only the last rows are queried."""
        b, n, d = x.shape
        h = self._n_head
        dh = d // h
        m = n if n_query is None else n_query

        def heads(t, rows):
            return t.reshape(b, rows, h, dh).transpose(0, 2, 1, 3)

        xq = x if m == n else x[:, n - m:, :]
        q = heads(self._map("q", xq), m)
        k = heads(self._map("k", x), n)
        v = heads(self._map("v", x), n)
        scores = T.matmul(q, T.swapaxes(k, -1, -2))
        if causal:
            att = T.causal_softmax(scores, 1.0 / math.sqrt(dh))
        else:
            att = T.softmax(scores * (1.0 / math.sqrt(dh)), axis=-1)
        out = T.matmul(att, v).transpose(0, 2, 1, 3).reshape(b, m, d)
        return self._map("o", out)

    def __call__(self, x: Tensor, causal: bool = True, n_query: int | None = None) -> Tensor:
        """One block; ``n_query`` keeps only the outputs at the last positions."""
        a = self.attention(self.ln1(x), causal, n_query)
        if n_query is not None and n_query != x.shape[1]:
            x = x[:, x.shape[1] - n_query:, :]
        x = x + a
        hidden = T.gelu(self._map("fc", self.ln2(x)))
        return x + self._map("proj", hidden)


class Backbone(Module):
    """Token embedding ``wte`` (E0), positional embedding ``wpe`` and blocks."""

    def __init__(self, config: BackboneConfig):
        self.config = config
        rng = np.random.default_rng([config.seed, 0xB0])
        d = config.d_llm
        self.wte = T.Tensor(rng.standard_normal((config.vocab_size, d)) * INIT_STD)
        self.wpe = T.Tensor(rng.standard_normal((config.max_seq_len, d)) * INIT_STD)
        self.blocks = [Block(d, config.n_head, rng) for _ in range(config.n_layer)]
        self.freeze()

    @property
    def E0(self) -> Tensor:
        return self.wte

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}wte", self.wte
        yield f"{prefix}wpe", self.wpe
        for i, blk in enumerate(self.blocks):
            yield from blk.named_parameters(f"{prefix}h.{i}.")

    def lora_parameters(self):
        """Adapter factors named ``lora.<layer>.<target>.{A,B}``."""
        for i, blk in enumerate(self.blocks):
            for t in sorted(blk.adapters):
                ad = blk.adapters[t]
                yield f"lora.{i}.{t}.A", ad.A
                yield f"lora.{i}.{t}.B", ad.B

    def forward_embeddings(self, seqs: Tensor, causal: bool = True,
                           keep_last: int | None = None) -> Tensor:
        """Run the blocks over a (batch, seq_len, d_llm) embedding sequence.

        ``keep_last`` returns only the final positions' hidden states; under a
        causal mask the last block then skips the rows nobody reads.
        """
        if seqs.ndim != 3 or seqs.shape[-1] != self.config.d_llm:
            raise ContractError(
                f"expected (batch, seq_len, {self.config.d_llm}) embeddings, got {seqs.shape}"
            )
        n = seqs.shape[1]
        if n > self.config.max_seq_len:
            raise ContractError(
                f"sequence length {n} exceeds backbone max_seq_len {self.config.max_seq_len}"
            )
        if keep_last is not None and not 0 < keep_last <= n:
            raise ContractError(f"keep_last={keep_last} outside 1..{n}")
        x = seqs + self.wpe[:n] if self.wpe.requires_grad else seqs + self.wpe.data[:n]
        last = len(self.blocks) - 1
        for i, blk in enumerate(self.blocks):
            x = blk(x, causal, keep_last if causal and i == last else None)
        if keep_last is not None and x.shape[1] != keep_last:
            x = x[:, n - keep_last:, :]
        return x


def init_seeded(config: BackboneConfig) -> Backbone:
    """Deterministic N(0, 0.02^2) initialization, every parameter frozen."""
    return Backbone(config)


def next_token_logits(b: Backbone, ids: np.ndarray) -> Tensor:
    emb = T.embedding(b.wte, ids)
    h = b.forward_embeddings(emb, causal=True)
    return T.matmul(h, T.transpose(b.wte, (1, 0)))


def _windows(corpus, seq_len: int) -> np.ndarray:
    rows = []
    for seq in corpus:
        seq = np.asarray(seq, dtype=np.int64)
        for start in range(0, max(len(seq) - 1, 0), seq_len):
            chunk = seq[start:start + seq_len + 1]
            if len(chunk) == seq_len + 1:
                rows.append(chunk)
    return np.array(rows, dtype=np.int64).reshape(-1, seq_len + 1)


def pretrain_pretext(b: Backbone, corpus, steps: int, seq_len: int = 32, batch_size: int = 16,
                     lr: float = 3e-3, seed: int = 0) -> Backbone:
    """Next-token training on a token-id corpus with the output head tied to E0.

    Parameters are unfrozen for the duration and re-frozen afterwards.  The
    per-step loss curve (with the step-0 loss first) is kept on
    ``b.pretext_losses``.
    """
    corpus = [c for c in corpus]
    if not corpus or all(len(c) == 0 for c in corpus):
        raise ContractError("pretext corpus is empty")
    for c in corpus:
        if len(c) and (min(c) < 0 or max(c) >= b.config.vocab_size):
            raise ContractError(f"corpus token outside [0, {b.config.vocab_size})")
    seq_len = min(seq_len, b.config.max_seq_len)
    windows = _windows(corpus, seq_len)
    if len(windows) == 0:
        raise ContractError(f"no corpus sequence is longer than seq_len={seq_len}")
    losses: list[float] = []
    if steps <= 0:
        b.pretext_losses = losses
        return b
    params = b.parameters()
    for p in params:
        p.requires_grad = True
    rng = np.random.default_rng([seed, 0x9E7])
    opt = Adam(params, lr=lr)
    try:
        for _ in range(steps + 1):
            pick = rng.integers(0, len(windows), size=min(batch_size, len(windows)))
            batch = windows[pick]
            with T.Tape():
                loss = T.cross_entropy(next_token_logits(b, batch[:, :-1]), batch[:, 1:])
                losses.append(loss.item())
                if len(losses) > steps:
                    break
                opt.zero_grad()
                loss.backward()
            opt.step()
    finally:
        for p in params:
            p.requires_grad = False
            p.grad = None
    b.pretext_losses = losses
    return b


def next_token_accuracy(b: Backbone, corpus, seq_len: int = 32) -> float:
    windows = _windows(corpus, min(seq_len, b.config.max_seq_len))
    with T.no_grad():
        logits = next_token_logits(b, windows[:, :-1]).data
    return float((logits.argmax(-1) == windows[:, 1:]).mean())
