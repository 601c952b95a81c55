"""Experiment harness: single runs, ablation / few-shot / timing matrices, tables."""

from __future__ import annotations

import csv
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .baselines import Ridge, persistence
from .config import RunConfig
from .data import WindDataset, generate_dataset, split
from .errors import ConfigError, ContractError
from .metrics import RunReport
from .model import ForecastModel, TrainLog, train

KINDS = ("ablation-structure", "ablation-nwp", "ablation-layers", "few-shot", "timing")
STRUCTURE_VARIANTS = ("full", "no_prompt", "no_augmenter", "no_finetune")
NWP_VARIANTS = ("with_nwp", "no_nwp")
DEFAULT_LAYERS = (1, 2, 4)
DEFAULT_FRACTIONS = (0.10, 0.25, 0.50, 1.00)


def make_dataset(run: RunConfig, seed: int) -> WindDataset:
    return generate_dataset(run.generator_config(seed), n_samples=run["data.n_samples"],
                            tau_h=run["model.tau_h"], tau_f=run["model.tau_f"],
                            tau_n=run["model.tau_n"])


def few_shot_subset(train_ds: WindDataset, fraction: float) -> WindDataset:
    """Keep the chronologically latest ``round(fraction * n)`` training samples."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"training fraction must be in (0, 1], got {fraction}")
    n = len(train_ds)
    k = max(1, int(round(fraction * n)))
    return train_ds.subset(np.arange(n - k, n))


def inference_seconds(model: ForecastModel, ds: WindDataset, batch_size: int = 32,
                      repeats: int = 3) -> float:
    """Median wall-clock seconds to predict one batch of ``batch_size`` samples."""
    idx = np.arange(min(batch_size, len(ds)))
    batch = model.make_batch(ds, idx)
    model.predict_batch(batch)  # warm-up (numba compilation, caches)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        model.predict_batch(batch)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


@dataclass
class RunResult:
    report: RunReport
    log: TrainLog
    model: ForecastModel | None = None
    test_pred: np.ndarray | None = None


def run_single(run: RunConfig, seed: int, name: str = "full", dataset: WindDataset | None = None,
               fraction: float = 1.0, keep_model: bool = False, time_inference: bool = False) -> RunResult:
    """Train one model and evaluate it on the chronological test split."""
    tcfg = run.train_config()
    T.set_precision(tcfg.precision)
    ds = dataset if dataset is not None else make_dataset(run, seed)
    tr, va, te = split(ds)
    if fraction < 1.0:
        tr = few_shot_subset(tr, fraction)
    model = ForecastModel(run.model_config(seed))
    log = train(model, tr, va, tcfg, seed=seed)
    pred = model.predict(te, tcfg.batch_size)
    timing = {"train_seconds": [e.seconds for e in log.epochs[1:]]}
    if time_inference:
        timing["inference_seconds"] = inference_seconds(model, te, tcfg.batch_size)
    extra = {
        "n_train": len(tr), "n_val": len(va), "n_test": len(te),
        "n_layer": run["backbone.n_layer"], "fraction": fraction,
        "n_trainable": model.n_trainable, "sequence_length": model.sequence_length,
        "best_epoch": log.best_epoch, "initial_val_mse": log.initial_val,
        "best_val_mse": log.best_val,
    }
    report = RunReport.from_predictions(name, run.fingerprint(), seed, pred, te.y, extra, timing)
    return RunResult(report, log, model if keep_model else None, pred if keep_model else None)


def baseline_reports(run: RunConfig, seed: int, dataset: WindDataset | None = None) -> list[RunReport]:
    ds = dataset if dataset is not None else make_dataset(run, seed)
    tr, _, te = split(ds)
    fp = run.fingerprint()
    return [
        RunReport.from_predictions("persistence", fp, seed, persistence(te), te.y),
        RunReport.from_predictions("ridge", fp, seed, Ridge(1.0).fit(tr).predict(te), te.y),
    ]


# --------------------------------------------------------------------------
# matrices


def _plan(kind: str, run: RunConfig, fractions, layers, ablations) -> list[tuple[str, dict, float]]:
    """(variant name, config overrides, train fraction) per run of one seed."""
    if kind == "ablation-structure":
        names = ablations or STRUCTURE_VARIANTS
        bad = [n for n in names if n not in STRUCTURE_VARIANTS]
        if bad:
            raise ConfigError(f"unknown ablation variant(s) {bad}; choose from {STRUCTURE_VARIANTS}")
        return [(n, {} if n == "full" else {f"ablation.{n}": True}, 1.0) for n in names]
    if kind == "ablation-nwp":
        return [("with_nwp", {}, 1.0), ("no_nwp", {"ablation.no_nwp": True}, 1.0)]
    if kind in ("ablation-layers", "timing"):
        return [(f"layers_{k}", {"backbone.n_layer": int(k)}, 1.0) for k in (layers or DEFAULT_LAYERS)]
    if kind == "few-shot":
        return [(f"fraction_{f:g}", {}, float(f)) for f in (fractions or DEFAULT_FRACTIONS)]
    raise ConfigError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")


def _job(args) -> RunReport:
    values, seed, name, overrides, fraction, timed, dataset = args
    run = RunConfig(values).update(overrides)
    return run_single(run, seed, name, dataset=dataset, fraction=fraction,
                      time_inference=timed).report


def threads_from_env(default: int = 1) -> int:
    raw = os.environ.get("M2W_THREADS")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"M2W_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass
class MatrixResult:
    kind: str
    reports: list[RunReport] = field(default_factory=list)

    def variants(self) -> list[str]:
        seen = []
        for r in self.reports:
            if r.name not in seen:
                seen.append(r.name)
        return seen

    def median(self, variant: str, metric: str = "mae") -> dict[str, float]:
        """Median over seeds of the per-horizon metric for one variant."""
        rows = [getattr(r, metric) for r in self.reports if r.name == variant]
        if not rows:
            raise ContractError(f"no runs for variant {variant!r}")
        return {h: float(statistics.median(r[h] for r in rows)) for h in rows[0]}

    def median_timing(self, variant: str, key: str) -> float:
        vals = []
        for r in self.reports:
            if r.name == variant and key in r.timing:
                v = r.timing[key]
                vals.append(float(np.mean(v)) if isinstance(v, list) else float(v))
        return float(statistics.median(vals)) if vals else float("nan")

    def table(self) -> list[dict]:
        """One row per (variant, horizon) with median MAE / RMSE over seeds."""
        rows = []
        for v in self.variants():
            mae, rmse = self.median(v, "mae"), self.median(v, "rmse")
            n = sum(r.name == v for r in self.reports)
            for h in mae:
                rows.append({"kind": self.kind, "variant": v, "horizon": int(h),
                             "mae_median": mae[h], "rmse_median": rmse[h], "n_seeds": n})
        return rows

    def timing_table(self) -> list[dict]:
        return [{"variant": v,
                 "train_seconds_per_epoch": self.median_timing(v, "train_seconds"),
                 "inference_seconds_per_batch": self.median_timing(v, "inference_seconds")}
                for v in self.variants()]

    def write(self, out_dir, stem: str | None = None, timing: bool = False) -> list[str]:
        """JSON-lines reports plus a flat CSV table; returns the written paths."""
        os.makedirs(out_dir, exist_ok=True)
        stem = stem or self.kind
        paths = [os.path.join(out_dir, f"{stem}.jsonl"), os.path.join(out_dir, f"{stem}.csv")]
        with open(paths[0], "w") as fh:
            for r in self.reports:
                fh.write(r.to_json(timing=timing) + "\n")
        write_csv(paths[1], self.table())
        if timing:
            paths.append(os.path.join(out_dir, f"{stem}_seconds.csv"))
            write_csv(paths[2], self.timing_table())
        return paths


def write_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def run_matrix(kind: str, run: RunConfig, seeds=(0, 1, 2), dataset: WindDataset | None = None,
               fractions=None, layers=None, ablations=None, threads: int | None = None) -> MatrixResult:
    """Run every variant of ``kind`` for every seed; independent runs may go in parallel.

    ``threads`` (default: ``M2W_THREADS`` or 1) caps worker processes.  Results
    are ordered by (seed, variant) whatever the completion order.
    """
    plan = _plan(kind, run, fractions, layers, ablations)
    timed = kind == "timing"
    jobs = [(dict(run.values), int(s), name, ov, frac, timed, dataset)
            for s in seeds for name, ov, frac in plan]
    n = threads if threads is not None else threads_from_env()
    if n <= 1 or len(jobs) == 1:
        reports = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(n, len(jobs))) as pool:
            reports = list(pool.map(_job, jobs))
    return MatrixResult(kind, reports)


def reports_to_jsonl(reports, path, timing: bool = False) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json(timing=timing) + "\n")


def read_jsonl(path) -> list[RunReport]:
    with open(path) as fh:
        return [RunReport.from_json(line) for line in fh if line.strip()]


__all__ = [
    "KINDS", "MatrixResult", "RunResult", "baseline_reports", "few_shot_subset",
    "inference_seconds", "make_dataset", "read_jsonl", "run_matrix", "run_single",
]
