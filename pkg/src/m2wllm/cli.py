"""``m2wllm`` command line: data generation, training, evaluation and experiments."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .baselines import Ridge, persistence
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, keys_help, load
from .data import generate_series, ingest_csv, split, write_csv
from .errors import ConfigError, ContractError, CorruptionError, SchemaError
from .metrics import RunReport, boxplot_rows, write_boxplot_csv

log = logging.getLogger("m2wllm")

COMMANDS = ("generate-data", "train", "evaluate", "predict", "ablate", "few-shot", "timing",
            "gradcheck")


# --------------------------------------------------------------------------
# helpers


def _overrides(pairs) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(f"--set expects KEY=VALUE, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _resolve(args) -> RunConfig:
    run = load(args.config, _overrides(args.set))
    if args.precision is not None:
        run.update({"train.precision": args.precision})
    return run


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _stamp(out: Path, command: str, run: RunConfig, seed: int, outputs: list[str]) -> None:
    """Sidecar naming the config fingerprint and seed behind every output file."""
    _dump(out / f"{command}.stamp.json", {
        "command": command, "fingerprint": run.fingerprint(), "seed": seed,
        "outputs": sorted(outputs), "config": run.values,
    })


def _dataset(run: RunConfig, seed: int, path: str | None):
    if path:
        return ingest_csv(path, run["model.tau_h"], run["model.tau_f"], run["model.tau_n"],
                          run["model.interval"])
    from .experiments import make_dataset
    return make_dataset(run, seed)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(value, flag: str, command: str):
    if not value:
        raise ConfigError(f"{command} requires {flag}")
    return value


def _float_list(text: str | None, flag: str, percent: bool = False) -> list[float] | None:
    if not text:
        return None
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects comma separated numbers, got {text!r}") from None
    if percent:
        vals = [v / 100 if v > 1 else v for v in vals]
    return vals


def _seeds(args) -> list[int]:
    return [args.seed + i for i in range(args.n_seeds)]


# --------------------------------------------------------------------------
# commands


def cmd_generate_data(args) -> None:
    run = _resolve(args)
    out = _out_dir(args)
    span = run["model.tau_h"] + max(run["model.tau_f"], run["model.tau_n"]) - 1
    frame = generate_series(run.generator_config(args.seed), run["data.n_samples"] + span)
    path = out / "dataset.csv"
    write_csv(frame, path)
    _stamp(out, "generate-data", run, args.seed, [path.name])
    print(f"wrote {path} ({len(frame.times)} steps x {len(frame.station_ids)} stations)")


def cmd_train(args) -> None:
    from .model import ForecastModel, train

    run = _resolve(args)
    out = _out_dir(args)
    tcfg = run.train_config()
    T.set_precision(tcfg.precision)
    ds = _dataset(run, args.seed, args.dataset)
    tr, va, _ = split(ds)
    model = ForecastModel(run.model_config(args.seed))
    tlog = train(model, tr, va, tcfg, seed=args.seed,
                 progress=lambda e: print(f"epoch {e.epoch} train {e.train_loss:.4f} "
                                          f"val {e.val_loss:.4f}", flush=True))
    meta = {"fingerprint": run.fingerprint(), "seed": args.seed, "run_config": run.values,
            "dataset": Path(args.dataset).name if args.dataset else "synthetic",
            "train": tlog.deterministic_dict()}
    ckpt = out / "checkpoint.m2w"
    save_checkpoint(model, ckpt, meta)
    _dump(out / "train_log.json", {"fingerprint": run.fingerprint(), "seed": args.seed,
                                   **tlog.deterministic_dict()})
    _dump(out / "train_timing.json", {"epoch_seconds": [e.seconds for e in tlog.epochs]})
    _stamp(out, "train", run, args.seed, [ckpt.name, "train_log.json", "train_timing.json"])
    print(f"wrote {ckpt} (best epoch {tlog.best_epoch}, val {tlog.best_val:.4f})")


def _load_for_eval(args, command: str):
    path = _require(args.checkpoint, "--checkpoint", command)
    model, meta = load_checkpoint(path)
    run = RunConfig(meta.get("run_config", {}))
    seed = int(meta.get("seed", args.seed))
    return model, meta, run, seed


def cmd_evaluate(args) -> None:
    model, meta, run, seed = _load_for_eval(args, "evaluate")
    out = _out_dir(args)
    ds = _dataset(run, seed, args.dataset)
    tr, _, te = split(ds)
    name = Path(args.dataset).stem if args.dataset else "synthetic"
    fp = run.fingerprint()
    preds = {"m2wllm": model.predict(te), "persistence": persistence(te),
             "ridge": Ridge(1.0).fit(tr).predict(te)}
    reports = [RunReport.from_predictions(k, fp, seed, p, te.y) for k, p in preds.items()]
    with open(out / "report.jsonl", "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
    rows = [row for k, p in preds.items() for row in boxplot_rows(name, k, p, te.y)]
    write_boxplot_csv(out / "daily_rmse.csv", rows)
    _stamp(out, "evaluate", run, seed, ["report.jsonl", "daily_rmse.csv"])
    for r in reports:
        print(f"{r.name:12s} MAE " + " ".join(f"{h}:{v:.3f}" for h, v in r.mae.items())
              + " | RMSE " + " ".join(f"{h}:{v:.3f}" for h, v in r.rmse.items()))


def cmd_predict(args) -> None:
    model, meta, run, seed = _load_for_eval(args, "predict")
    out = _out_dir(args)
    ds = _dataset(run, seed, args.dataset)
    if not args.dataset:
        ds = split(ds)[2]
    pred = model.predict(ds)
    step = np.timedelta64(ds.interval, "m")
    path = out / "forecast.csv"
    with open(path, "w") as fh:
        fh.write("sample,origin,station,step,timestamp,forecast_mw\n")
        for i in range(len(ds)):
            origin = ds.start[i] + ds.tau_h * step
            for c in range(ds.n_stations):
                for k in range(ds.tau_f):
                    ts = np.datetime_as_string(origin + k * step, unit="m")
                    fh.write(f"{i},{np.datetime_as_string(origin, unit='m')},{c},{k + 1},{ts},"
                             f"{pred[i, c, k]:.6f}\n")
    _stamp(out, "predict", run, seed, [path.name])
    print(f"wrote {path} ({len(ds)} samples)")


def _matrix(args, kind: str, **kw):
    from .experiments import run_matrix

    run = _resolve(args)
    ds = _dataset(run, args.seed, args.dataset) if args.dataset else None
    res = run_matrix(kind, run, seeds=_seeds(args), dataset=ds, **kw)
    return run, res


def _print_table(res) -> None:
    for row in res.table():
        print(f"{row['variant']:14s} step {row['horizon']:2d}  MAE {row['mae_median']:.3f}  "
              f"RMSE {row['rmse_median']:.3f}")


def cmd_ablate(args) -> None:
    out = _out_dir(args)
    kinds = [k.strip() for k in (args.ablation_list or "structure,nwp,layers").split(",") if k.strip()]
    bad = [k for k in kinds if k not in ("structure", "nwp", "layers")]
    if bad:
        raise ConfigError(f"--ablation-list accepts structure,nwp,layers; got {bad}")
    layers = [int(v) for v in _float_list(args.layers_list, "--layers-list") or []] or None
    written = []
    run = _resolve(args)
    for k in kinds:
        run, res = _matrix(args, f"ablation-{k}", layers=layers if k == "layers" else None)
        written += [Path(p).name for p in res.write(out)]
        _print_table(res)
    _stamp(out, "ablate", run, args.seed, written)


def cmd_few_shot(args) -> None:
    out = _out_dir(args)
    run, res = _matrix(args, "few-shot",
                       fractions=_float_list(args.fraction_list, "--fraction-list", percent=True))
    written = [Path(p).name for p in res.write(out)]
    _print_table(res)
    _stamp(out, "few-shot", run, args.seed, written)


def cmd_timing(args) -> None:
    out = _out_dir(args)
    layers = [int(v) for v in _float_list(args.layers_list, "--layers-list") or []] or None
    run, res = _matrix(args, "timing", layers=layers)
    written = [Path(p).name for p in res.write(out, timing=True)]
    for row in res.timing_table():
        print(f"{row['variant']:10s} train {row['train_seconds_per_epoch']:.2f} s/epoch  "
              f"inference {row['inference_seconds_per_batch']:.4f} s/batch")
    _stamp(out, "timing", run, args.seed, written)


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results, seconds = run_suite(args.seed)
    failed = 0
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:22s} rel_err {r.rel_error:.2e}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} passed in {seconds:.1f}s")
    return 1 if failed else 0


HANDLERS = {
    "generate-data": cmd_generate_data, "train": cmd_train, "evaluate": cmd_evaluate,
    "predict": cmd_predict, "ablate": cmd_ablate, "few-shot": cmd_few_shot,
    "timing": cmd_timing, "gradcheck": cmd_gradcheck,
}


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    epilog = ("config keys (set in a TOML file via --config or with --set KEY=VALUE):\n"
              + keys_help() + "\n\nenvironment: M2W_THREADS caps parallel runs; "
              "M2W_DISABLE_NUMBA=1 selects the pure numpy kernels.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    common.add_argument("--out-dir", default=".", help="output directory (default .)")
    common.add_argument("--dataset", help="CSV dataset instead of synthetic data")
    common.add_argument("--checkpoint", help="checkpoint archive to read")
    common.add_argument("--fraction-list", help="few-shot training fractions, e.g. 10,25,50,100")
    common.add_argument("--layers-list", help="backbone layer counts, e.g. 1,2,4")
    common.add_argument("--ablation-list", help="ablations to run: structure,nwp,layers")
    common.add_argument("--precision", type=int, choices=(32, 64), help="training float width")
    common.add_argument("--n-seeds", type=int, default=3,
                        help="seeds per experiment matrix, starting at --seed (default 3)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="m2wllm", description=__doc__, epilog=epilog,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", metavar="command")
    helps = {
        "generate-data": "write a synthetic multi-station CSV",
        "train": "train a model and write checkpoint + training log",
        "evaluate": "evaluate a checkpoint against persistence and ridge baselines",
        "predict": "write forecasts of a checkpoint as CSV",
        "ablate": "structure / NWP / layer-count ablation matrices",
        "few-shot": "training-fraction sweep",
        "timing": "per-epoch training and per-batch inference time per layer count",
        "gradcheck": "64-bit finite-difference gradient suite",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], epilog=epilog,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        rc = HANDLERS[args.command](args)
    except (ContractError, ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CorruptionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
