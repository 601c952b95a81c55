"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL: ...`` line to the
terminal (past pytest's capture) before asserting, so a ``pytest -v`` log
doubles as the acceptance report.  Criteria 5-7 train real models and take
several minutes each.
"""

import hashlib
import math
import time

import numpy as np
import pytest

from m2wllm import tensor as T
from m2wllm.baselines import persistence
from m2wllm.cli import main as cli_main
from m2wllm.config import HARNESS, TINY, RunConfig
from m2wllm.data import generate_dataset, split
from m2wllm.embedding import PatchConfig, denormalize, instance_normalize, make_patches, \
    patch_count, patch_indices
from m2wllm.experiments import inference_seconds, run_matrix, run_single
from m2wllm.gradcheck import run_suite
from m2wllm.lora import detach_adapters
from m2wllm.metrics import horizons_for, mae_per_step, rmse_per_step
from m2wllm.model import ForecastModel
from m2wllm.optim import Adam

from oracles import mae_rmse_loops, patch_count_by_walking, persistence_mae_by_step

SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


def sha(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


def test_criterion_01_gradient_suite(report):
    results, seconds = run_suite(0)
    bad = [r.name for r in results if not r.passed]
    worst = max(r.rel_error for r in results)
    ok = not bad and worst < 1e-4 and seconds < 60
    assert report(1, ok, f"{len(results)} checks, worst rel err {worst:.2e}, {seconds:.1f}s"
                         + (f", failing {bad}" if bad else ""))


def test_criterion_02_patch_formula(report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    wrong = []
    covered = 0
    for _ in range(1000):
        tau = int(rng.integers(1, 400))
        l_p = int(rng.integers(1, tau + 1))
        s = int(rng.integers(1, 2 * l_p + 1))
        want = math.ceil((tau - l_p) / s) + 1
        cfg = PatchConfig(l_p, s)
        idx = patch_indices(tau, cfg)
        x = rng.standard_normal(tau)
        patches = make_patches(x, cfg)
        good = (patch_count(tau, l_p, s) == want == patch_count_by_walking(tau, l_p, s)
                == idx.shape[0] == patches.shape[0])
        # patch k reads x[k*s : k*s+l_p], the overrun repeating x[-1]
        k = int(rng.integers(0, want))
        ref = np.array([x[min(k * s + i, tau - 1)] for i in range(l_p)])
        good &= np.array_equal(patches[k], ref) and idx[-1, -1] == tau - 1
        if s <= l_p:
            covered += 1
            good &= np.array_equal(np.unique(idx), np.arange(tau))
        if not good:
            wrong.append((tau, l_p, s))
    seconds = time.perf_counter() - t0
    ok = not wrong and seconds < 5
    assert report(2, ok, f"1000 cases ({covered} with s <= l_p checked for coverage), "
                         f"{len(wrong)} wrong, {seconds:.2f}s")


def test_criterion_03_lora_identity_and_budget(report):
    run = RunConfig()
    cfg = run.model_config(0)
    model = ForecastModel(cfg)
    ds = generate_dataset(run.generator_config(0), n_samples=4)
    seq, _ = model.assemble(model.make_batch(ds, np.arange(4)))
    d, r = cfg.backbone.d_llm, cfg.lora.rank
    closed = cfg.backbone.n_layer * len(cfg.lora.targets) * r * (d + d)
    n_lora = sum(p.size for n, p in model.named_trainable() if n.startswith("lora."))
    with T.no_grad():
        adapted = model.backbone.forward_embeddings(seq).data
        detach_adapters(model.backbone)
        frozen = model.backbone.forward_embeddings(seq).data
    gap = float(np.abs(adapted - frozen).max())

    tiny = RunConfig(TINY)
    m = ForecastModel(tiny.model_config(0))
    before = {n: sha(p.data) for n, p in m.backbone.named_parameters()}
    tds = generate_dataset(tiny.generator_config(0), n_samples=16, tau_h=16, tau_f=4, tau_n=4)
    opt = Adam(m.trainable_parameters(), lr=1e-2)
    rng = np.random.default_rng(3)
    for _ in range(50):
        opt.zero_grad()
        with T.Tape():
            m.loss(m.make_batch(tds, rng.choice(16, 8, replace=False))).backward()
        opt.step()
    moved = any(np.abs(p.data).max() > 0 for n, p in m.named_trainable() if n.endswith(".B"))
    same = before == {n: sha(p.data) for n, p in m.backbone.named_parameters()}
    ok = gap <= 1e-6 and n_lora == closed and same and moved
    assert report(3, ok, f"zero-init gap {gap:.1e}, LoRA params {n_lora} vs closed form {closed}, "
                         f"W0 checksums {'unchanged' if same else 'CHANGED'} after 50 steps")


def test_criterion_04_normalization_round_trip(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    n_const = 0
    for _ in range(1000):
        c, t = int(rng.integers(1, 6)), int(rng.integers(1, 120))
        x = rng.standard_normal((c, t)) * 10 ** rng.uniform(-2, 3) + rng.uniform(-500, 500)
        for j in range(c):
            if rng.random() < 0.3:
                x[j] = rng.uniform(-100, 100)
                n_const += 1
        z, stats = instance_normalize(x)
        worst = max(worst, float(np.abs(denormalize(z, stats) - x).max()))
    ok = worst <= 1e-6
    assert report(4, ok, f"1000 series ({n_const} constant channels), worst abs err {worst:.1e}")


@pytest.mark.slow
def test_criterion_05_synthetic_learning(report):
    run = RunConfig()
    t0 = time.perf_counter()
    ds = generate_dataset(run.generator_config(0), n_samples=run["data.n_samples"])
    tr, va, te = split(ds)
    # the persistence oracle fixes what "beats persistence" means on this data
    pers = persistence_mae_by_step(te.x, te.y)
    np.testing.assert_allclose(mae_per_step(persistence(te), te.y), pers, rtol=1e-12)
    res = run_single(run, 0, dataset=ds)
    seconds = time.perf_counter() - t0
    model16 = res.report.mae["16"]
    ratio = res.report.extra["best_val_mse"] / res.report.extra["initial_val_mse"]
    ok = model16 < pers[15] and ratio <= 0.5 and seconds < 15 * 60
    assert report(5, ok, f"{len(tr)}/{len(va)}/{len(te)} split; step-16 MAE {model16:.2f} vs "
                         f"persistence {pers[15]:.2f}; best/initial val MSE {ratio:.3f}; "
                         f"{seconds / 60:.1f} min")


@pytest.mark.slow
def test_criterion_06_ablation_harness(report, tmp_path):
    run = RunConfig(HARNESS)
    structure = run_matrix("ablation-structure", run, seeds=SEEDS)
    nwp = run_matrix("ablation-nwp", run, seeds=SEEDS)
    layers = run_matrix("ablation-layers", run, seeds=SEEDS)
    for m in (structure, nwp, layers):
        m.write(tmp_path)
    hs = {str(h) for h in horizons_for(run["model.tau_f"])}
    shape_ok = (len(structure.table()) == 4 * len(hs) and structure.variants() == [
        "full", "no_prompt", "no_augmenter", "no_finetune"]
        and len(nwp.table()) == 2 * len(hs) and len(layers.variants()) == 3
        and all(len([r for r in m.reports if r.name == v]) == 3
                for m in (structure, nwp, layers) for v in m.variants()))
    with_nwp, no_nwp = nwp.median("with_nwp")["16"], nwp.median("no_nwp")["16"]
    ok = shape_ok and no_nwp >= with_nwp
    others = ", ".join(f"{v} {structure.median(v)['16']:.2f}" for v in structure.variants())
    sweep = ", ".join(f"{v} {layers.median(v)['16']:.2f}" for v in layers.variants())
    assert report(6, ok, f"median step-16 MAE no_nwp {no_nwp:.2f} >= with_nwp {with_nwp:.2f}; "
                         f"structure [{others}]; layers [{sweep}]")


@pytest.mark.slow
def test_criterion_07_few_shot(report):
    m = run_matrix("few-shot", RunConfig(HARNESS), seeds=SEEDS)
    full, tenth = m.median("fraction_1"), m.median("fraction_0.1")
    ok = m.variants() == ["fraction_0.1", "fraction_0.25", "fraction_0.5", "fraction_1"] and \
        all(full[h] <= tenth[h] for h in full)
    rows = "; ".join(f"h{h} {tenth[h]:.2f} -> {full[h]:.2f}" for h in full)
    assert report(7, ok, f"median MAE 10% -> 100%: {rows}")


@pytest.mark.slow
def test_criterion_08_determinism(report, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(RunConfig(dict(TINY, **{"train.epochs": 2})).to_toml())
    blobs = []
    for d in ("a", "b"):
        out = tmp_path / d
        assert cli_main(["train", "--config", str(cfg), "--seed", "3", "--out-dir", str(out)]) == 0
        assert cli_main(["evaluate", "--checkpoint", str(out / "checkpoint.m2w"),
                         "--out-dir", str(out)]) == 0
        blobs.append([(out / n).read_bytes() for n in
                      ("checkpoint.m2w", "report.jsonl", "train_log.json")])
    a, b = (run_matrix("ablation-nwp", RunConfig(dict(TINY, **{"train.epochs": 1})), seeds=(1,))
            for _ in range(2))
    same_matrix = [r.to_json() for r in a.reports] == [r.to_json() for r in b.reports]
    ok = blobs[0] == blobs[1] and same_matrix
    assert report(8, ok, "checkpoint, report and log byte-identical across two runs; "
                         f"matrix reports {'identical' if same_matrix else 'DIFFER'}")


def test_criterion_09_metric_oracle(report):
    rng = np.random.default_rng(9)
    worst, order_ok = 0.0, True
    for _ in range(100):
        shape = (int(rng.integers(1, 20)), int(rng.integers(1, 6)), int(rng.integers(1, 17)))
        y = rng.uniform(0, 200, shape)
        pred = y + rng.standard_normal(shape) * rng.uniform(0, 50)
        mae, rmse = mae_per_step(pred, y), rmse_per_step(pred, y)
        ref_mae, ref_rmse = mae_rmse_loops(pred, y)
        worst = max(worst, float(np.abs(mae - ref_mae).max()), float(np.abs(rmse - ref_rmse).max()))
        order_ok &= bool(np.all(rmse >= mae - 1e-12))
    ok = worst <= 1e-10 and order_ok
    assert report(9, ok, f"100 cases, worst deviation {worst:.1e}, RMSE >= MAE {order_ok}")


@pytest.mark.slow
def test_criterion_10_timing(report):
    run = RunConfig(dict(TINY, **{"train.epochs": 2, "train.batch_size": 32,
                                  "data.n_samples": 256}))
    m = run_matrix("timing", run, seeds=(0,), layers=(1, 2, 4))
    rows = m.timing_table()
    schema = [r["variant"] for r in rows] == ["layers_1", "layers_2", "layers_4"] and all(
        r["train_seconds_per_epoch"] > 0 and r["inference_seconds_per_batch"] > 0 for r in rows)
    tiny = max(r["inference_seconds_per_batch"] for r in rows)
    # the full-width default model, reported for reference
    full = RunConfig()
    T.set_precision(32)
    model = ForecastModel(full.model_config(0))
    ds = generate_dataset(full.generator_config(0), n_samples=32)
    default_s = inference_seconds(model, ds, 32)
    ok = schema and tiny < 0.5
    assert report(10, ok, f"per-layer timing rows {len(rows)}; tiny-config inference "
                          f"{tiny * 1e3:.1f} ms / 32-sample batch (default width: {default_s:.2f} s)")
