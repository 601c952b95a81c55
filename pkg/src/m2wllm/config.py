"""Run configuration: typed dataclasses plus a flat, documented key registry.

Config files are TOML; nested tables and dotted keys are both flattened to
``section.name`` keys, so ``patch.l_p = 16`` and ``[patch] l_p = 16`` are
equivalent.  Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backbone import BackboneConfig
from .data import GeneratorConfig
from .embedding import AugmenterConfig, PatchConfig
from .errors import ConfigError
from .prompt import HISTORY_TEMPLATE, NWP_TEMPLATE, TASK_TEMPLATE, PromptConfig

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 4
    alpha: float = 8.0
    targets: tuple = ("q", "v")


@dataclass(frozen=True)
class ModelConfig:
    tau_h: int = 96
    tau_f: int = 16
    tau_n: int = 16
    n_stations: int = 5
    n_nwp: int = 3
    interval: int = 15
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    nwp_patch: PatchConfig = field(default_factory=lambda: PatchConfig(4, 4))
    aug: AugmenterConfig = field(default_factory=AugmenterConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    no_prompt: bool = False
    no_augmenter: bool = False
    no_finetune: bool = False
    no_nwp: bool = False
    seed: int = 0

    @property
    def n_outputs(self) -> int:
        return self.n_stations


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 6
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 5
    precision: int = 32


# key -> (default, type, help)
KEYS: dict[str, tuple[Any, type, str]] = {
    "backbone.n_layer": (4, int, "decoder blocks in the frozen backbone"),
    "backbone.d_llm": (64, int, "backbone hidden width (E0 columns)"),
    "backbone.n_head": (4, int, "self-attention heads per block"),
    "backbone.vocab_size": (1024, int, "rows of the token embedding E0"),
    "backbone.max_seq_len": (256, int, "longest accepted embedding sequence"),
    "prompt.l_s": (32, int, "tokens per channel prompt after pad/truncate"),
    "prompt.buckets": (256, int, "hash buckets for numbers and unknown words"),
    "prompt.task": (TASK_TEMPLATE, str, "task prompt template"),
    "prompt.history": (HISTORY_TEMPLATE, str, "historical power prompt template"),
    "prompt.nwp": (NWP_TEMPLATE, str, "NWP feature prompt template"),
    "patch.l_p": (16, int, "power patch length"),
    "patch.s": (8, int, "power patch stride"),
    "patch.nwp_l_p": (4, int, "NWP patch length"),
    "patch.nwp_s": (4, int, "NWP patch stride"),
    "aug.d_m": (64, int, "augmenter attention width"),
    "aug.heads": (4, int, "augmenter cross-attention heads"),
    "aug.n_vm": (100, int, "token mapper output rows (reduced vocabulary)"),
    "lora.rank": (4, int, "adapter rank r"),
    "lora.alpha": (8.0, float, "adapter scaling numerator (alpha / r applied)"),
    "lora.targets": ("q,v", str, "comma separated projections to adapt: q,k,v,o,fc,proj"),
    "model.tau_h": (96, int, "history length in steps"),
    "model.tau_f": (16, int, "forecast horizon in steps"),
    "model.tau_n": (16, int, "NWP window length in steps"),
    "model.stations": (5, int, "wind stations C (= outputs M)"),
    "model.n_nwp": (3, int, "NWP features per station"),
    "model.interval": (15, int, "minutes between steps"),
    "ablation.no_prompt": (False, bool, "drop every prompt segment"),
    "ablation.no_augmenter": (False, bool, "replace the augmenter by a linear patch embedding"),
    "ablation.no_finetune": (False, bool, "attach no LoRA adapters"),
    "ablation.no_nwp": (False, bool, "drop NWP segments"),
    "train.epochs": (6, int, "training epochs"),
    "train.batch_size": (32, int, "samples per optimizer step"),
    "train.lr": (1e-3, float, "Adam learning rate"),
    "train.patience": (5, int, "early stopping patience in epochs"),
    "train.precision": (32, int, "float width for training: 32 or 64"),
    "data.n_samples": (2048, int, "synthetic samples to generate"),
    "data.capacity_min": (50.0, float, "smallest station capacity, MW"),
    "data.capacity_max": (200.0, float, "largest station capacity, MW"),
    "data.p_calm_enter": (0.003, float, "per-step probability of entering the calm regime"),
    "data.p_calm_exit": (0.10, float, "per-step probability of leaving the calm regime"),
    "data.mean_speed": (9.0, float, "long-run mean wind speed, m/s"),
    "data.diurnal_amplitude": (2.5, float, "diurnal wind speed amplitude, m/s"),
    "data.nwp_noise": (0.6, float, "NWP wind speed error std, m/s"),
}


def defaults() -> dict[str, Any]:
    return {k: v[0] for k, v in KEYS.items()}


def _coerce(key: str, value):
    default, typ, _ = KEYS[key]
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "1", "yes", "false", "0", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{key} expects true/false, got {value!r}")
    if key == "lora.targets" and isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    try:
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} expects {typ.__name__}, got {value!r}") from None


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


class RunConfig:
    """Resolved flat key/value configuration."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = defaults()
        if values:
            self.update(values)

    def update(self, values: dict[str, Any]) -> "RunConfig":
        unknown = sorted(k for k in values if k not in KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        for k, v in values.items():
            self.values[k] = _coerce(k, v)
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls(_flatten(raw))

    def with_overrides(self, **values) -> "RunConfig":
        new = RunConfig(dict(self.values))
        return new.update(values)

    def __getitem__(self, key: str):
        return self.values[key]

    def fingerprint(self) -> str:
        blob = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_toml(self) -> str:
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, bool):
                lines.append(f"{k} = {'true' if v else 'false'}")
            elif isinstance(v, str):
                lines.append(f"{k} = {json.dumps(v)}")
            else:
                lines.append(f"{k} = {v!r}")
        return "\n".join(lines) + "\n"

    # -- typed views
    def model_config(self, seed: int) -> ModelConfig:
        v = self.values
        targets = tuple(t.strip() for t in v["lora.targets"].split(",") if t.strip())
        return ModelConfig(
            tau_h=v["model.tau_h"], tau_f=v["model.tau_f"], tau_n=v["model.tau_n"],
            n_stations=v["model.stations"], n_nwp=v["model.n_nwp"], interval=v["model.interval"],
            backbone=BackboneConfig(v["backbone.n_layer"], v["backbone.d_llm"], v["backbone.n_head"],
                                    v["backbone.vocab_size"], v["backbone.max_seq_len"], seed),
            prompt=PromptConfig(l_s=v["prompt.l_s"], n_buckets=v["prompt.buckets"],
                                task=v["prompt.task"], history=v["prompt.history"],
                                nwp=v["prompt.nwp"]),
            patch=PatchConfig(v["patch.l_p"], v["patch.s"]),
            nwp_patch=PatchConfig(v["patch.nwp_l_p"], v["patch.nwp_s"]),
            aug=AugmenterConfig(v["aug.d_m"], v["aug.heads"], v["aug.n_vm"]),
            lora=LoraConfig(v["lora.rank"], v["lora.alpha"], targets),
            no_prompt=v["ablation.no_prompt"], no_augmenter=v["ablation.no_augmenter"],
            no_finetune=v["ablation.no_finetune"], no_nwp=v["ablation.no_nwp"],
            seed=seed,
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        if v["train.precision"] not in (32, 64):
            raise ConfigError("train.precision must be 32 or 64")
        return TrainConfig(v["train.epochs"], v["train.batch_size"], v["train.lr"],
                           v["train.patience"], v["train.precision"])

    def generator_config(self, seed: int) -> GeneratorConfig:
        v = self.values
        return GeneratorConfig(
            n_stations=v["model.stations"], capacity_min=v["data.capacity_min"],
            capacity_max=v["data.capacity_max"], mean_speed=v["data.mean_speed"],
            p_calm_enter=v["data.p_calm_enter"],
            p_calm_exit=v["data.p_calm_exit"], diurnal_amplitude=v["data.diurnal_amplitude"],
            nwp_noise=v["data.nwp_noise"], interval=v["model.interval"], seed=seed,
        )


def keys_help() -> str:
    """One line per key with its default, for --help."""
    width = max(len(k) for k in KEYS)
    lines = []
    for k, (default, _, text) in KEYS.items():
        shown = json.dumps(default) if isinstance(default, str) else repr(default).lower() \
            if isinstance(default, bool) else repr(default)
        lines.append(f"  {k.ljust(width)}  {text} (default {shown})")
    return "\n".join(lines)


TINY = {
    "backbone.n_layer": 2, "backbone.d_llm": 16, "backbone.n_head": 2,
    "backbone.vocab_size": 128, "backbone.max_seq_len": 64,
    "prompt.l_s": 6, "prompt.buckets": 64,
    "patch.l_p": 4, "patch.s": 4, "patch.nwp_l_p": 2, "patch.nwp_s": 2,
    "aug.d_m": 12, "aug.heads": 3, "aug.n_vm": 8,
    "lora.rank": 2, "lora.alpha": 4.0,
    "model.tau_h": 16, "model.tau_f": 4, "model.tau_n": 4, "model.stations": 2,
    "train.batch_size": 8, "data.n_samples": 64,
}


# Reduced width and prompt length for multi-seed experiment matrices; the data
# shape (history, horizon, NWP window) matches the defaults so every reported
# horizon exists.
HARNESS = {
    "backbone.n_layer": 2, "backbone.d_llm": 32, "backbone.n_head": 4,
    "backbone.vocab_size": 512,
    "prompt.l_s": 8, "prompt.buckets": 128,
    "aug.d_m": 32, "aug.heads": 4, "aug.n_vm": 64,
    "model.stations": 3, "data.n_samples": 1024, "train.epochs": 4,
}

@dataclass(frozen=True)
class ResolvedTiny:
    run: RunConfig
    model: ModelConfig


def tiny_config(seed: int = 0) -> ResolvedTiny:
    """Very small configuration for gradient checks and fast tests."""
    run = RunConfig(TINY)
    return ResolvedTiny(run, run.model_config(seed))


def load(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    cfg = RunConfig.from_file(path) if path else RunConfig()
    if overrides:
        cfg.update(overrides)
    return cfg


__all__ = [
    "HARNESS", "KEYS", "TINY", "LoraConfig", "ModelConfig", "RunConfig", "TrainConfig",
    "defaults", "keys_help", "load", "tiny_config",
]
