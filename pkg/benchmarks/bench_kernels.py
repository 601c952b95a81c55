"""Compiled vs pure-numpy kernels, plus one full training step under each.

    python benchmarks/bench_kernels.py            # default-model shapes
    python benchmarks/bench_kernels.py --quick    # smaller shapes, fewer repeats

Prints one line per kernel: numpy seconds, numba seconds and the speedup.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from m2wllm import _kernels as K


def timeit(fn, repeats: int) -> float:
    fn()  # warm-up (compilation)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(quick: bool):
    rng = np.random.default_rng(0)
    seqs, n, d = (32, 64, 32) if quick else (160, 151, 64)
    heads = 4
    f32 = np.float32
    rows = rng.standard_normal((seqs * n, d)).astype(f32)
    gain, bias = np.ones(d, f32), np.zeros(d, f32)
    _, xhat, rstd = K._layer_norm_fwd_np(rows, gain, bias, 1e-5)
    scores = rng.standard_normal((seqs * heads, n, n)).astype(f32)
    att = K._causal_softmax_fwd_np(scores, 0.25)
    g_att = rng.standard_normal(att.shape).astype(f32)
    flat_att = att.reshape(-1, n)
    hidden = rng.standard_normal((seqs, n, 4 * d)).astype(f32)
    th = np.tanh(hidden)
    g_hidden = rng.standard_normal(hidden.shape).astype(f32)
    steps = 20_000 if quick else 200_000
    shocks = rng.standard_normal(steps)
    uniforms = rng.random(steps)
    return [
        ("layer_norm_fwd", lambda: K.layer_norm_fwd(rows, gain, bias, 1e-5)),
        ("layer_norm_bwd", lambda: K.layer_norm_bwd(rows, xhat, rstd, gain)),
        ("softmax_bwd", lambda: K.softmax_bwd(flat_att, g_att.reshape(-1, n))),
        ("causal_softmax_bwd", lambda: K.causal_softmax_bwd(att, g_att, 0.25)),
        ("gelu_bwd", lambda: K.gelu_bwd(g_hidden, hidden, th)),
        ("ar2", lambda: K.ar2(shocks, 1.7, -0.72)),
        ("markov2", lambda: K.markov2(uniforms, 0.02, 0.1)),
    ]


def train_step(quick: bool):
    from m2wllm import tensor as T
    from m2wllm.config import RunConfig, TINY
    from m2wllm.data import generate_dataset
    from m2wllm.model import ForecastModel
    from m2wllm.optim import Adam

    run = RunConfig(TINY) if quick else RunConfig()
    T.set_precision(32)
    ds = generate_dataset(run.generator_config(0), n_samples=64, tau_h=run["model.tau_h"],
                          tau_f=run["model.tau_f"], tau_n=run["model.tau_n"])
    model = ForecastModel(run.model_config(0))
    opt = Adam(model.trainable_parameters(), lr=1e-3)
    batch = model.make_batch(ds, np.arange(32))

    def step():
        opt.zero_grad()
        with T.Tape():
            model.loss(batch).backward()
        opt.step()

    return step


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeats", type=int, default=None)
    args = ap.parse_args(argv)
    repeats = args.repeats or (3 if args.quick else 5)
    if not K.HAVE_NUMBA:
        print("numba is not importable; only the numpy path can be timed")
    print(f"{'kernel':22s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    rows = cases(args.quick) + [("train_step (batch 32)", train_step(args.quick))]
    for name, fn in rows:
        K.use_numba(False)
        t_np = timeit(fn, repeats)
        K.use_numba(True)
        t_nb = timeit(fn, repeats) if K.HAVE_NUMBA else float("nan")
        print(f"{name:22s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
