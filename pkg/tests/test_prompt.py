import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from m2wllm import tensor as T
from m2wllm.errors import ConfigError, ContractError
from m2wllm.prompt import (PAD_ID, PromptConfig, dataset_token_ids, embed_prompts,
                           empty_prompt_embedding, fmt_number, render_prompts, series_stats,
                           text_is_plain, tokenize)


def test_constant_series_stats_text():
    texts = render_prompts(np.full((1, 96), 10.0), None, PromptConfig(), tau_f=16)
    assert "mean 10.00" in texts[0][0]
    assert "variance 0.00" in texts[0][0]


def test_task_text_mentions_window_and_interval():
    text = render_prompts(np.ones((1, 96)), None, PromptConfig(), tau_f=16, interval=15)[0][0]
    words = text.split()
    assert "96" in words and "15" in words and "16" in words


def test_render_is_deterministic(rng):
    x, z = rng.random((3, 96)), rng.random((3, 3, 16))
    cfg = PromptConfig()
    assert render_prompts(x, z, cfg, 16) == render_prompts(x, z, cfg, 16)


def test_one_prompt_per_channel(rng):
    texts = render_prompts(rng.random((4, 96)), rng.random((4, 3, 16)), PromptConfig(), 16)
    assert len(texts) == 4 and all(len(t) == 4 for t in texts)
    assert "wind speed" in texts[0][1] and "air pressure" in texts[0][2]
    assert "temperature" in texts[0][3]


def test_text_has_no_symbols(rng):
    x = rng.normal(-5, 3, (2, 96))
    for row in render_prompts(x, rng.normal(0, 1, (2, 3, 16)), PromptConfig(), 16):
        for text in row:
            assert text_is_plain(text), text


def test_negative_numbers_spelled_out():
    assert fmt_number(-1.234) == "minus 1.23"
    assert fmt_number(-0.001) == "0.00"


@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=50))
def test_stats_match_independent_computation(values):
    x = np.array(values)
    s = series_stats(x)
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    assert s["min"] == min(values) and s["max"] == max(values)
    assert s["mean"] == pytest.approx(mean, rel=1e-9, abs=1e-9)
    assert s["variance"] == pytest.approx(var, rel=1e-6, abs=1e-6)


def test_stats_use_raw_values():
    x = np.array([[0.0, 100.0]])
    text = render_prompts(x, None, PromptConfig(), 16)[0][0]
    assert "range 0.00 to 100.00 mean 50.00 variance 2500.00" in text


def test_tokenize_padding_and_truncation():
    vocab = PromptConfig().vocabulary
    assert tokenize("", vocab, 8).tolist() == [PAD_ID] * 8
    a, b = tokenize("wind wind", vocab, 4)[:2]
    assert a == b
    assert len(tokenize(" ".join(["power"] * 13), vocab, 8)) == 8


def test_numbers_hash_to_stable_buckets():
    vocab = PromptConfig().vocabulary
    i = vocab.lookup("12.34")
    assert i == vocab.lookup("12.34")
    assert vocab.bucket_start <= i < vocab.size


def test_bad_template_slot():
    with pytest.raises(ConfigError):
        PromptConfig(history="{feature} {bogus}")
    with pytest.raises(ConfigError):
        PromptConfig(l_s=0)


def test_dataset_token_ids_shape_and_agreement(rng):
    cfg = PromptConfig()
    x, z = rng.random((2, 3, 96)), rng.random((2, 3, 3, 16))
    ids = dataset_token_ids(x, z, cfg, tau_f=16)
    assert ids.shape == (2, 3, 4, cfg.l_s)
    text = render_prompts(x[1], z[1], cfg, 16)[2][1]
    np.testing.assert_array_equal(ids[1, 2, 1], tokenize(text, cfg.vocabulary, cfg.l_s))


def test_embed_lookup(rng):
    E0 = T.Tensor(rng.standard_normal((50, 8)))
    before = E0.data.copy()
    ids = np.array([[PAD_ID] * 5, [3, 4, 5, 6, 7]])
    sp = embed_prompts(ids, E0)
    assert sp.shape == (2, 5, 8)
    np.testing.assert_array_equal(sp[0], np.tile(E0.data[PAD_ID], (5, 1)))
    ids2 = ids.copy()
    ids2[1, 2] = 9
    diff = np.any(embed_prompts(ids2, E0) != sp, axis=-1)
    assert diff.sum() == 1 and diff[1, 2]
    np.testing.assert_array_equal(E0.data, before)
    with pytest.raises(ContractError):
        embed_prompts(np.array([50]), E0)


def test_empty_prompt_has_zero_length():
    assert empty_prompt_embedding(3, 16).shape == (3, 0, 16)
