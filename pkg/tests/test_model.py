import numpy as np
import pytest

from m2wllm import tensor as T
from m2wllm.config import TINY, RunConfig, TrainConfig
from m2wllm.data import generate_dataset, split
from m2wllm.errors import ConfigError, ContractError
from m2wllm.model import Batch, ForecastModel, train


def tiny(**overrides):
    run = RunConfig(TINY).update(overrides)
    return run, ForecastModel(run.model_config(0))


def tiny_data(run, n=64, seed=0):
    return generate_dataset(run.generator_config(seed), n_samples=n, tau_h=run["model.tau_h"],
                            tau_f=run["model.tau_f"], tau_n=run["model.tau_n"])


def full_batch(model, ds):
    return model.make_batch(ds, np.arange(len(ds)))


@pytest.mark.parametrize("flags, length", [
    ({}, 151),
    ({"ablation.no_prompt": True}, 23),
    ({"ablation.no_prompt": True, "ablation.no_nwp": True}, 11),
    ({"ablation.no_nwp": True}, 43),
])
def test_default_sequence_lengths(flags, length):
    m = ForecastModel(RunConfig(flags).model_config(0))
    assert m.sequence_length == length
    assert sum(n for _, n in m.segment_layout()) == length
    assert m.segment_layout()[-1] == ("power_patches", 11)


def test_assembled_sequence_shape():
    run, m = tiny()
    ds = tiny_data(run, 8)
    seq, _ = m.assemble(full_batch(m, ds))
    assert seq.shape == (8 * 2, m.sequence_length, 16)


def test_overflow_names_amount():
    with pytest.raises(ConfigError, match="by 87"):
        ForecastModel(RunConfig({"backbone.max_seq_len": 64}).model_config(0))


def test_untrained_predicts_clamped_history_mean():
    run, m = tiny()
    ds = tiny_data(run, 16)
    pred = m.predict(ds)
    assert pred.shape == ds.y.shape
    want = np.clip(ds.x.mean(-1, keepdims=True), 0, None)
    np.testing.assert_allclose(pred, np.broadcast_to(want, pred.shape), atol=1e-9)


def test_prediction_shape_default():
    run = RunConfig({"backbone.n_layer": 1})
    m = ForecastModel(run.model_config(0))
    ds = generate_dataset(run.generator_config(0), n_samples=2)
    assert m.predict(ds).shape == (2, 5, 16)


def test_inference_deterministic():
    run, m = tiny()
    m.head.weight.data[...] = np.random.default_rng(0).standard_normal(m.head.weight.shape)
    ds = tiny_data(run, 8)
    assert m.predict(ds).tobytes() == m.predict(ds).tobytes()


def test_denormalization_inverts_ground_truth():
    run, m = tiny()
    ds = tiny_data(run, 16)
    b = full_batch(m, ds)
    _, stats = m.forward(b)
    yn = (b.y - stats.mean) / stats.std
    np.testing.assert_allclose(m.to_power(yn, stats, b.capacities), b.y, atol=1e-6)


def test_outputs_clamped_to_capacity():
    run, m = tiny()
    ds = tiny_data(run, 8)
    m.head.bias.data[...] = 1e6
    assert np.all(m.predict(ds) <= ds.capacities[None, :, None])
    m.head.bias.data[...] = -1e6
    assert np.all(m.predict(ds) == 0)


def test_station_permutation_equivariance():
    run, m = tiny(**{"model.stations": 3})
    rng = np.random.default_rng(0)
    for p in m.trainable_parameters():
        p.data[...] = rng.normal(0, 0.1, p.shape)
    ds = tiny_data(run, 6)
    b = full_batch(m, ds)
    perm = np.array([2, 0, 1])
    pb = Batch(b.x[:, perm], b.z[:, perm], b.y[:, perm], b.ids[:, perm], b.capacities[perm])
    np.testing.assert_allclose(m.predict_batch(pb), m.predict_batch(b)[:, perm], atol=1e-10)


def test_ablation_ordering():
    def build(**f):
        return ForecastModel(RunConfig(f).model_config(0))
    full, nof = build(), build(**{"ablation.no_finetune": True})
    assert full.n_trainable > nof.n_trainable
    assert full.n_trainable - nof.n_trainable == 4096
    lengths = [build(**f).sequence_length for f in
               ({}, {"ablation.no_prompt": True},
                {"ablation.no_prompt": True, "ablation.no_nwp": True})]
    assert lengths[0] > lengths[1] > lengths[2]


def test_registry_budget_is_exact():
    m = ForecastModel(RunConfig().model_config(0))
    aug = sum(p.size for _, p in m.named_trainable() if _.startswith("embed."))
    head = 11 * 64 * 16 + 16
    assert m.n_trainable == aug + 4096 + head


def test_dims_mismatch():
    run, m = tiny()
    other = generate_dataset(RunConfig(TINY).generator_config(0), n_samples=4, tau_h=20,
                             tau_f=4, tau_n=4)
    with pytest.raises(ContractError):
        m.make_batch(other, [0])


# -- training ---------------------------------------------------------------------

def test_lr_zero_changes_nothing():
    run, m = tiny()
    tr, va, _ = split(tiny_data(run, 40))
    before = [p.data.copy() for p in m.trainable_parameters()]
    log = train(m, tr, va, TrainConfig(epochs=2, batch_size=8, lr=0.0))
    assert len({e.val_loss for e in log.epochs}) == 1
    for p, b in zip(m.trainable_parameters(), before):
        np.testing.assert_array_equal(p.data, b)


def test_zero_epochs_logs_initial_only():
    run, m = tiny()
    tr, va, _ = split(tiny_data(run, 40))
    log = train(m, tr, va, TrainConfig(epochs=0, batch_size=8))
    assert [e.epoch for e in log.epochs] == [0]
    assert log.epochs[0].train_loss is None


def test_empty_train_set():
    run, m = tiny()
    ds = tiny_data(run, 20)
    with pytest.raises(ContractError):
        train(m, ds.subset(np.arange(0)), ds, TrainConfig(epochs=1))


def test_training_improves_and_only_registry_moves():
    run, m = tiny()
    tr, va, _ = split(tiny_data(run, 64))
    frozen = [p.data.copy() for p in m.backbone.parameters()]
    log = train(m, tr, va, TrainConfig(epochs=4, batch_size=8, lr=3e-3), seed=0)
    assert log.best_val < log.initial_val
    for p, f in zip(m.backbone.parameters(), frozen):
        assert p.data.tobytes() == f.tobytes()


def test_best_weights_restored():
    run, m = tiny()
    tr, va, _ = split(tiny_data(run, 64))
    log = train(m, tr, va, TrainConfig(epochs=3, batch_size=8, lr=3e-2, patience=1), seed=0)
    assert m.eval_loss(va, 8) == pytest.approx(log.best_val, rel=1e-9)


def test_training_is_deterministic():
    def once():
        run, m = tiny()
        tr, va, _ = split(tiny_data(run, 40))
        log = train(m, tr, va, TrainConfig(epochs=2, batch_size=8), seed=3)
        return log.deterministic_dict(), [p.data.tobytes() for p in m.trainable_parameters()]
    assert once() == once()


def test_float32_training_step():
    with T.precision(32):
        run, m = tiny()
        tr, va, _ = split(tiny_data(run, 40))
        train(m, tr, va, TrainConfig(epochs=1, batch_size=8))
        assert all(p.dtype == np.float32 for p in m.trainable_parameters())
