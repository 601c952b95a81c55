"""End-to-end forecaster: prompts + patch embeddings -> adapted backbone -> head."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig, init_seeded
from .config import LoraConfig, ModelConfig, TrainConfig
from .data import WindDataset
from .embedding import (AugmenterConfig, LinearPatchEmbedder, NormStats, PatchConfig,
                        SemanticAugmenter, instance_normalize, make_patches, patch_count)
from .errors import ConfigError, ContractError
from .lora import attach_adapters
from .nn import Linear, Module
from .optim import Adam
from .prompt import PromptConfig, check_vocab_fits, dataset_token_ids, embed_prompts
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class Batch:
    x: np.ndarray          # (B, C, tau_h) MW
    z: np.ndarray          # (B, C, n, tau_n)
    y: np.ndarray | None   # (B, C, tau_f) MW
    ids: np.ndarray        # (B, C, 1 + n, L_s)
    capacities: np.ndarray  # (C,)

    def __len__(self) -> int:
        return self.x.shape[0]


class ForecastModel(Module):
    """Frozen backbone with LoRA, semantic augmenters and a shared linear head.

    Per station the backbone sees, in order: for each NWP feature its prompt
    and patches, then the power prompt and the power patches.  The head reads
    the final P positions (the power patches), so under the causal mask they
    attend to every other segment.
    """

    def __init__(self, cfg: ModelConfig, backbone: Backbone | None = None):
        self.cfg = cfg
        bcfg = cfg.backbone
        self._backbone = backbone if backbone is not None else init_seeded(bcfg)
        if not cfg.no_prompt:
            check_vocab_fits(cfg.prompt, bcfg.vocab_size)
        self.n_patches = patch_count(cfg.tau_h, cfg.patch.l_p, cfg.patch.s)
        self.n_nwp_patches = patch_count(cfg.tau_n, cfg.nwp_patch.l_p, cfg.nwp_patch.s)
        L = self.sequence_length
        if L > bcfg.max_seq_len:
            raise ConfigError(
                f"per-station sequence length {L} overflows backbone.max_seq_len="
                f"{bcfg.max_seq_len} by {L - bcfg.max_seq_len}"
            )
        d = bcfg.d_llm
        if cfg.no_augmenter:
            self.power_embed = LinearPatchEmbedder(cfg.patch.l_p, d, seed=cfg.seed)
            self.nwp_embed = None if cfg.no_nwp else LinearPatchEmbedder(cfg.nwp_patch.l_p, d, seed=cfg.seed)
        else:
            self.power_embed = SemanticAugmenter(cfg.aug, cfg.patch.l_p, d, bcfg.vocab_size, seed=cfg.seed)
            self.nwp_embed = None if cfg.no_nwp else SemanticAugmenter(
                cfg.aug, cfg.nwp_patch.l_p, d, bcfg.vocab_size, seed=cfg.seed)
        if cfg.no_finetune:
            self.adapters = []
        else:
            lc = cfg.lora
            self.adapters = attach_adapters(self._backbone, lc.targets, lc.rank, lc.alpha, cfg.seed)
        self.head = Linear(self.n_patches * d, cfg.tau_f, np.random.default_rng(0), zero=True)

    @property
    def backbone(self) -> Backbone:
        return self._backbone

    # ------------------------------------------------------------------ layout
    @property
    def sequence_length(self) -> int:
        cfg = self.cfg
        n = 0 if cfg.no_nwp else cfg.n_nwp
        prompt = 0 if cfg.no_prompt else cfg.prompt.l_s * (1 + n)
        return prompt + self.n_patches + n * self.n_nwp_patches

    def segment_layout(self) -> list[tuple[str, int]]:
        """(name, length) of each segment of a station's sequence, in order."""
        cfg = self.cfg
        segs = []
        if not cfg.no_nwp:
            for j in range(cfg.n_nwp):
                if not cfg.no_prompt:
                    segs.append((f"nwp{j}_prompt", cfg.prompt.l_s))
                segs.append((f"nwp{j}_patches", self.n_nwp_patches))
        if not cfg.no_prompt:
            segs.append(("power_prompt", cfg.prompt.l_s))
        segs.append(("power_patches", self.n_patches))
        return segs

    # --------------------------------------------------------------- registry
    def named_trainable(self) -> list[tuple[str, Tensor]]:
        out = [(f"embed.power.{n}", p) for n, p in self.power_embed.named_parameters()]
        if self.nwp_embed is not None:
            out += [(f"embed.nwp.{n}", p) for n, p in self.nwp_embed.named_parameters()]
        out += list(self._backbone.lora_parameters())
        out += [(f"head.{n}", p) for n, p in self.head.named_parameters()]
        return out

    def trainable_parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_trainable()]

    def named_state(self) -> list[tuple[str, Tensor]]:
        """Every array needed to reproduce predictions: frozen backbone + registry."""
        frozen = [(f"backbone.{n}", p) for n, p in self._backbone.named_parameters()]
        return frozen + self.named_trainable()

    @property
    def n_trainable(self) -> int:
        return int(sum(p.size for p in self.trainable_parameters()))

    # ------------------------------------------------------------------ data
    def token_ids(self, ds: WindDataset) -> np.ndarray:
        key = ("ids", self.cfg.prompt, ds.tau_f, ds.interval)
        ids = ds._cache.get(key)
        if ids is None:
            ids = dataset_token_ids(ds.x, ds.z, self.cfg.prompt, ds.tau_f, ds.interval)
            ds._cache[key] = ids
        return ids

    def make_batch(self, ds: WindDataset, idx) -> Batch:
        idx = np.asarray(idx)
        self._check_dims(ds)
        ids = self.token_ids(ds)[idx] if not self.cfg.no_prompt else np.zeros((len(idx), 0), np.int64)
        return Batch(ds.x[idx], ds.z[idx], ds.y[idx], ids, ds.capacities)

    def _check_dims(self, ds: WindDataset) -> None:
        cfg = self.cfg
        want = (cfg.n_stations, cfg.tau_h, cfg.tau_f, cfg.n_nwp, cfg.tau_n)
        got = (ds.n_stations, ds.tau_h, ds.tau_f, ds.z.shape[2], ds.tau_n)
        if want != got:
            raise ContractError(
                f"dataset dims (stations, tau_h, tau_f, n_nwp, tau_n)={got} do not match model {want}"
            )

    # --------------------------------------------------------------- forward
    def assemble(self, batch: Batch) -> tuple[Tensor, NormStats]:
        """Per-station input sequences S_c: (B*C, L, d_llm), plus power NormStats."""
        cfg = self.cfg
        E0 = self._backbone.E0
        dt = E0.dtype
        xn, pstats = instance_normalize(batch.x)
        power = self.power_embed(make_patches(xn, cfg.patch).astype(dt), E0)
        segs: list = []
        prompts = None if cfg.no_prompt else embed_prompts(batch.ids, E0)
        if not cfg.no_nwp:
            zn, _ = instance_normalize(batch.z)
            nwp = self.nwp_embed(make_patches(zn, cfg.nwp_patch).astype(dt), E0)
            for j in range(cfg.n_nwp):
                if prompts is not None:
                    segs.append(prompts[:, :, 1 + j])
                segs.append(nwp[:, :, j])
        if prompts is not None:
            segs.append(prompts[:, :, 0])
        segs.append(power)
        seq = T.concat(segs, axis=2) if len(segs) > 1 else power
        b, c, L, d = seq.shape
        return seq.reshape(b * c, L, d), pstats

    def forward(self, batch: Batch) -> tuple[Tensor, NormStats]:
        """Normalized forecasts (B, C, tau_f) and the power statistics to invert them."""
        seq, pstats = self.assemble(batch)
        h = self._backbone.forward_embeddings(seq, causal=True, keep_last=self.n_patches)
        n, _, d = h.shape
        tail = h.reshape(n, self.n_patches * d)
        out = self.head(tail)
        b = len(batch)
        return out.reshape(b, n // b, self.cfg.tau_f), pstats

    def loss(self, batch: Batch) -> Tensor:
        pred, stats = self.forward(batch)
        target = (batch.y - stats.mean) / stats.std
        return T.mse_loss(pred, target.astype(pred.dtype))

    @staticmethod
    def to_power(y_norm: np.ndarray, stats: NormStats, capacities: np.ndarray) -> np.ndarray:
        """Denormalize then clamp to [0, capacity] per station."""
        y = np.asarray(y_norm, dtype=np.float64) * stats.std + stats.mean
        return np.clip(y, 0.0, np.asarray(capacities)[:, None])

    def predict_batch(self, batch: Batch) -> np.ndarray:
        with T.no_grad():
            out, stats = self.forward(batch)
        return self.to_power(out.data, stats, batch.capacities)

    def predict(self, ds: WindDataset, batch_size: int = 32) -> np.ndarray:
        """Forecasts in MW for every sample: (N, C, tau_f)."""
        preds = [self.predict_batch(self.make_batch(ds, np.arange(i, min(i + batch_size, len(ds)))))
                 for i in range(0, len(ds), batch_size)]
        return np.concatenate(preds, axis=0) if preds else np.zeros((0,) + ds.y.shape[1:])

    def eval_loss(self, ds: WindDataset, batch_size: int = 32) -> float:
        total = 0.0
        with T.no_grad():
            for i in range(0, len(ds), batch_size):
                batch = self.make_batch(ds, np.arange(i, min(i + batch_size, len(ds))))
                total += self.loss(batch).item() * len(batch)
        return total / len(ds)

    # ------------------------------------------------------------- snapshots
    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.trainable_parameters()]

    def restore(self, snap: list[np.ndarray]) -> None:
        for p, a in zip(self.trainable_parameters(), snap):
            p.data[...] = a


# --------------------------------------------------------------------------
# config (de)serialization for checkpoints


def model_config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["lora"]["targets"] = list(cfg.lora.targets)
    return d


def model_config_from_dict(d: dict) -> ModelConfig:
    d = copy.deepcopy(d)
    d["backbone"] = BackboneConfig(**d["backbone"])
    d["prompt"] = PromptConfig(**d["prompt"])
    d["patch"] = PatchConfig(**d["patch"])
    d["nwp_patch"] = PatchConfig(**d["nwp_patch"])
    d["aug"] = AugmenterConfig(**d["aug"])
    lora = d["lora"]
    d["lora"] = LoraConfig(lora["rank"], lora["alpha"], tuple(lora["targets"]))
    return ModelConfig(**d)


# --------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float | None
    val_loss: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def best_val(self) -> float:
        return min(e.val_loss for e in self.epochs)

    @property
    def initial_val(self) -> float:
        return self.epochs[0].val_loss

    def deterministic_dict(self) -> dict:
        """Everything except wall-clock timings."""
        return {
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "epochs": [{"epoch": e.epoch, "train_loss": e.train_loss, "val_loss": e.val_loss}
                       for e in self.epochs],
        }

    def to_dict(self) -> dict:
        d = self.deterministic_dict()
        for rec, e in zip(d["epochs"], self.epochs):
            rec["seconds"] = e.seconds
        return d


def train(model: ForecastModel, train_ds: WindDataset, val_ds: WindDataset, tcfg: TrainConfig,
          seed: int = 0, progress=None) -> TrainLog:
    """Adam on normalized-target MSE with early stopping on validation MSE.

    Epoch 0 in the log is the evaluation before any update.  The weights of
    the best validation epoch are restored at the end.
    """
    if len(train_ds) == 0:
        raise ContractError("training set is empty")
    if len(val_ds) == 0:
        raise ContractError("validation set is empty")
    params = model.trainable_parameters()
    opt = Adam(params, lr=tcfg.lr)
    rng = np.random.default_rng([seed, 0x7A1])
    out = TrainLog()
    t0 = time.perf_counter()
    best = model.eval_loss(val_ds, tcfg.batch_size)
    out.epochs.append(EpochRecord(0, None, best, time.perf_counter() - t0))
    snap = model.snapshot()
    bad = 0
    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_ds))
        running = 0.0
        for i in range(0, len(order), tcfg.batch_size):
            batch = model.make_batch(train_ds, np.sort(order[i:i + tcfg.batch_size]))
            opt.zero_grad()
            with T.Tape():
                loss = model.loss(batch)
                loss.backward()
            opt.step()
            running += loss.item() * len(batch)
        train_seconds = time.perf_counter() - t0
        val = model.eval_loss(val_ds, tcfg.batch_size)
        out.epochs.append(EpochRecord(epoch, running / len(train_ds), val, train_seconds))
        if progress:
            progress(out.epochs[-1])
        log.info("epoch %d train %.4f val %.4f (%.1fs)", epoch, running / len(train_ds), val,
                 train_seconds)
        if val < best:
            best, bad = val, 0
            out.best_epoch = epoch
            snap = model.snapshot()
        else:
            bad += 1
            if bad >= tcfg.patience:
                out.stopped_early = True
                break
    model.restore(snap)
    return out
