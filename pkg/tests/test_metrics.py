import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from m2wllm.baselines import Ridge, persistence, ridge
from m2wllm.data import GeneratorConfig, WindDataset, generate_dataset, split
from m2wllm.errors import ContractError, SchemaError
from m2wllm.metrics import (RunReport, boxplot_rows, daily_rmse, horizons_for, mae_per_step,
                            rmse_per_step, write_boxplot_csv)

from oracles import mae_rmse_loops, persistence_mae_by_step


def test_perfect_forecast():
    y = np.random.default_rng(0).random((3, 2, 4))
    assert np.all(mae_per_step(y, y) == 0) and np.all(rmse_per_step(y, y) == 0)


def test_two_error_example():
    y = np.zeros((2, 1, 1))
    pred = np.array([1.0, -2.0]).reshape(2, 1, 1)
    assert mae_per_step(pred, y)[0] == pytest.approx(1.5)
    assert rmse_per_step(pred, y)[0] == pytest.approx(math.sqrt(2.5))
    assert round(rmse_per_step(pred, y)[0], 4) == 1.5811


def test_metrics_match_loop_oracle_on_100_cases():
    rng = np.random.default_rng(0)
    for _ in range(100):
        shape = tuple(rng.integers(1, 6, 3))
        pred, y = rng.normal(0, 50, shape), rng.normal(0, 50, shape)
        mae, rmse = mae_rmse_loops(pred, y)
        assert np.max(np.abs(mae_per_step(pred, y) - mae)) < 1e-10
        assert np.max(np.abs(rmse_per_step(pred, y) - rmse)) < 1e-10


@given(st.integers(0, 2**31 - 1))
def test_rmse_never_below_mae(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 5, 3))
    pred, y = rng.standard_cauchy(shape), rng.standard_cauchy(shape)
    assert np.all(rmse_per_step(pred, y) >= mae_per_step(pred, y) - 1e-12)


def test_shape_mismatch():
    with pytest.raises(ContractError):
        mae_per_step(np.zeros((2, 3)), np.zeros((3, 2)))


def test_horizons():
    assert horizons_for(16) == (1, 4, 8, 16)
    assert horizons_for(4) == (1, 4)


def test_daily_rmse_chunks():
    y = np.zeros((200, 1, 4))
    pred = np.zeros_like(y)
    pred[:96, 0, 3] = 2.0
    pred[96:192, 0, 3] = 1.0
    pred[192:, 0, 3] = 100.0  # partial day, dropped
    np.testing.assert_allclose(daily_rmse(pred, y, 4), [2.0, 1.0])
    assert len(daily_rmse(pred[:50], y[:50], 4)) == 0


def test_boxplot_csv(tmp_path):
    rng = np.random.default_rng(0)
    y, pred = rng.random((192, 2, 4)), rng.random((192, 2, 4))
    rows = list(boxplot_rows("synthetic", "m2wllm", pred, y))
    assert len(rows) == 2 * 2  # two days x horizons (1, 4)
    write_boxplot_csv(tmp_path / "b.csv", rows)
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "dataset,method,horizon,day_index,rmse"
    assert len(lines) == 5


def test_report_round_trip():
    rng = np.random.default_rng(0)
    y, pred = rng.random((10, 3, 16)), rng.random((10, 3, 16))
    r = RunReport.from_predictions("m", "abc", 2, pred, y, extra={"n": 1}, timing={"s": 0.5})
    assert set(r.mae) == {"1", "4", "8", "16"}
    text = r.to_json()
    assert "timing" not in json.loads(text)
    back = RunReport.from_json(text)
    assert back.to_json() == text
    assert RunReport.from_json(r.to_json(timing=True)).timing == {"s": 0.5}
    for h in r.mae:
        assert r.rmse[h] >= r.mae[h]


def test_report_schema_errors():
    with pytest.raises(SchemaError):
        RunReport.from_json("{not json")
    with pytest.raises(SchemaError, match="mae"):
        RunReport.from_json('{"name": "x"}')


# -- baselines -----------------------------------------------------------------------

def constant_dataset(n=10, value=3.0):
    x = np.full((n, 2, 8), value)
    z = np.ones((n, 2, 3, 4))
    y = np.full((n, 2, 4), value)
    start = np.datetime64("2021-01-01T00:00") + np.arange(n) * np.timedelta64(15, "m")
    return WindDataset(x, z, y, start, np.array([10.0, 10.0]))


def test_persistence_on_constant_series():
    ds = constant_dataset()
    assert np.all(mae_per_step(persistence(ds), ds.y) == 0)


def test_persistence_matches_oracle_and_grows():
    ds = generate_dataset(GeneratorConfig(seed=1), n_samples=600)
    mae = mae_per_step(persistence(ds), ds.y)
    np.testing.assert_allclose(mae, persistence_mae_by_step(ds.x, ds.y), atol=1e-10)
    assert np.all(np.diff(mae) >= 0)


def test_ridge_infinite_lambda_is_training_mean():
    ds = generate_dataset(GeneratorConfig(seed=2), n_samples=200)
    pred = Ridge(lam=np.inf).fit(ds).predict(ds)
    mean = ds.y.mean(axis=0)
    np.testing.assert_allclose(pred, np.broadcast_to(mean, pred.shape))
    mad = np.abs(ds.y - mean).mean(axis=(0, 1))
    np.testing.assert_allclose(mae_per_step(pred, ds.y), mad, atol=1e-10)
    huge = Ridge(lam=1e15).fit(ds).predict(ds)
    np.testing.assert_allclose(huge, pred, atol=1e-3)


def test_ridge_beats_persistence_on_generator():
    tr, _, te = split(generate_dataset(GeneratorConfig(seed=0), n_samples=1000))
    assert mae_per_step(ridge(tr, te), te.y)[-1] < mae_per_step(persistence(te), te.y)[-1]


def test_ridge_without_nwp_and_clamp():
    tr, _, te = split(generate_dataset(GeneratorConfig(seed=0), n_samples=300))
    p = Ridge(use_nwp=False).fit(tr).predict(te)
    assert p.shape == te.y.shape
    assert p.min() >= 0 and np.all(p <= te.capacities[None, :, None])
