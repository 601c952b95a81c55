"""Per-channel text prompts, a fixed word vocabulary and their E0 embedding."""

from __future__ import annotations

import re
import string
import zlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError

TASK_TEMPLATE = "forecast {target} next {tau_f} steps every {interval} minutes from past {tau_h} steps"
HISTORY_TEMPLATE = "{feature} in {window} range {min} to {max} mean {mean} variance {variance}"
NWP_TEMPLATE = "{feature} forecast in {window} range {min} to {max} mean {mean} variance {variance}"

POWER_FEATURE = "wind power"
NWP_FEATURES = ("wind speed", "air pressure", "temperature")

PAD_ID = 0
UNK_ID = 1

_EXTRA_WORDS = "wind power speed air pressure temperature last next hours minutes minus"
_TEXT_OK = re.compile(r"^[a-z0-9. ]*$")


@dataclass(frozen=True)
class PromptConfig:
    l_s: int = 32
    n_buckets: int = 256
    task: str = TASK_TEMPLATE
    history: str = HISTORY_TEMPLATE
    nwp: str = NWP_TEMPLATE
    target: str = POWER_FEATURE

    def __post_init__(self):
        if self.l_s < 1:
            raise ConfigError("prompt.l_s must be >= 1")
        for key, tpl in (("task", self.task), ("history", self.history), ("nwp", self.nwp)):
            allowed = _SLOTS[key]
            used = {f for _, f, _, _ in string.Formatter().parse(tpl) if f}
            bad = used - allowed
            if bad:
                raise ConfigError(f"prompt.{key} uses unknown slot(s) {sorted(bad)}")

    @cached_property
    def vocabulary(self) -> "Vocabulary":
        return build_vocabulary(self)


_SLOTS = {
    "task": {"target", "tau_f", "tau_h", "interval"},
    "history": {"feature", "window", "min", "max", "mean", "variance"},
    "nwp": {"feature", "window", "min", "max", "mean", "variance"},
}


def fmt_number(v: float) -> str:
    """Two decimals, with a word instead of a minus sign."""
    s = f"{abs(v):.2f}"
    if v < 0 and s != "0.00":
        return "minus " + s
    return s


def window_text(steps: int, interval: int, past: bool) -> str:
    minutes = steps * interval
    span = f"{minutes // 60} hours" if minutes % 60 == 0 else f"{minutes} minutes"
    return ("last " if past else "next ") + span


def series_stats(x: np.ndarray) -> dict[str, np.ndarray]:
    """min / max / mean / population variance over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ContractError("cannot describe an empty series")
    return {"min": x.min(-1), "max": x.max(-1), "mean": x.mean(-1), "variance": x.var(-1)}


def _render(tpl: str, feature: str, window: str, stats: dict, idx) -> str:
    return tpl.format(feature=feature, window=window,
                      **{k: fmt_number(float(stats[k][idx])) for k in ("min", "max", "mean", "variance")})


def render_task(cfg: PromptConfig, tau_h: int, tau_f: int, interval: int) -> str:
    return cfg.task.format(target=cfg.target, tau_h=tau_h, tau_f=tau_f, interval=interval)


def render_prompts(x: np.ndarray, z: np.ndarray | None, cfg: PromptConfig, tau_f: int,
                   interval: int = 15, nwp_features=NWP_FEATURES) -> list[list[str]]:
    """Texts for one sample: ``[station][channel]`` with channel 0 = power.

    ``x`` is (C, tau_h) raw power, ``z`` is (C, n, tau_n) raw NWP or None.
    Every channel text starts with the task prompt.  Statistics come from the
    raw, un-normalized values.
    """
    x = np.asarray(x)
    c, tau_h = x.shape
    task = render_task(cfg, tau_h, tau_f, interval)
    hist_stats = series_stats(x)
    hist_win = window_text(tau_h, interval, past=True)
    out = []
    for i in range(c):
        texts = [task + " " + _render(cfg.history, POWER_FEATURE, hist_win, hist_stats, i)]
        if z is not None:
            z = np.asarray(z)
            nwp_stats = series_stats(z)
            nwp_win = window_text(z.shape[-1], interval, past=False)
            for j in range(z.shape[1]):
                texts.append(task + " " + _render(cfg.nwp, nwp_features[j], nwp_win, nwp_stats, (i, j)))
        out.append(texts)
    return out


def text_is_plain(text: str) -> bool:
    """True when ``text`` holds only lowercase words, digits and decimal points."""
    return bool(_TEXT_OK.match(text))


class Vocabulary:
    """Word ids: 0 pad, 1 unknown, then the lexicon, then hash buckets for the rest."""

    def __init__(self, words, n_buckets: int):
        self.words = tuple(sorted(set(words)))
        self._ids = {w: i + 2 for i, w in enumerate(self.words)}
        self.n_buckets = n_buckets
        self.bucket_start = 2 + len(self.words)

    @property
    def size(self) -> int:
        return self.bucket_start + self.n_buckets

    def lookup(self, word: str) -> int:
        i = self._ids.get(word)
        if i is not None:
            return i
        if self.n_buckets == 0:
            return UNK_ID
        return self.bucket_start + zlib.crc32(word.encode("utf-8")) % self.n_buckets


def _template_words(tpl: str) -> list[str]:
    words = []
    for literal, _, _, _ in string.Formatter().parse(tpl):
        words.extend(literal.lower().split())
    return words


def build_vocabulary(cfg: PromptConfig) -> Vocabulary:
    words = _template_words(cfg.task) + _template_words(cfg.history) + _template_words(cfg.nwp)
    words += _EXTRA_WORDS.split() + cfg.target.split()
    return Vocabulary(words, cfg.n_buckets)


def tokenize(text: str, vocab: Vocabulary, l_s: int) -> np.ndarray:
    """Whitespace word tokens, padded with PAD_ID or truncated to exactly ``l_s``."""
    ids = [vocab.lookup(w) for w in text.lower().split()[:l_s]]
    ids += [PAD_ID] * (l_s - len(ids))
    return np.array(ids, dtype=np.int64)


def check_vocab_fits(cfg: PromptConfig, vocab_size: int) -> None:
    need = cfg.vocabulary.size
    if need > vocab_size:
        raise ConfigError(
            f"prompt vocabulary needs {need} ids (lexicon + {cfg.n_buckets} buckets) "
            f"but backbone.vocab_size is {vocab_size}"
        )


def dataset_token_ids(x: np.ndarray, z: np.ndarray, cfg: PromptConfig, tau_f: int,
                      interval: int = 15) -> np.ndarray:
    """Token ids for a batch of samples: (N, C, 1 + n, L_s).

    x: (N, C, tau_h) raw power; z: (N, C, n, tau_n) raw NWP.
    """
    vocab = cfg.vocabulary
    n_samples, c, tau_h = x.shape
    n_nwp = z.shape[2]
    task = render_task(cfg, tau_h, tau_f, interval)
    hist = series_stats(x)
    nwp = series_stats(z)
    hist_win = window_text(tau_h, interval, past=True)
    nwp_win = window_text(z.shape[-1], interval, past=False)
    out = np.empty((n_samples, c, 1 + n_nwp, cfg.l_s), dtype=np.int64)
    for k in range(n_samples):
        for i in range(c):
            text = task + " " + _render(cfg.history, POWER_FEATURE, hist_win, hist, (k, i))
            out[k, i, 0] = tokenize(text, vocab, cfg.l_s)
            for j in range(n_nwp):
                text = task + " " + _render(cfg.nwp, NWP_FEATURES[j], nwp_win, nwp, (k, i, j))
                out[k, i, 1 + j] = tokenize(text, vocab, cfg.l_s)
    return out


def embed_prompts(token_ids: np.ndarray, E0: T.Tensor) -> np.ndarray:
    """S_p[..., l, :] = E0[token_ids[..., l]]; the table is read, never written."""
    ids = np.asarray(token_ids)
    if ids.size and (ids.min() < 0 or ids.max() >= E0.shape[0]):
        raise ContractError(f"token id outside [0, {E0.shape[0]})")
    return E0.data[ids]


def empty_prompt_embedding(n_channels: int, d_llm: int, dtype=np.float64) -> np.ndarray:
    """S_p for the prompt ablation: zero-length sequence per channel."""
    return np.zeros((n_channels, 0, d_llm), dtype=dtype)
