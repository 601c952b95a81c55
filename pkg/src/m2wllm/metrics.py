"""Per-step MAE / RMSE, daily RMSE chunks and the serializable run report."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, SchemaError

HORIZONS = (1, 4, 8, 16)
STEPS_PER_DAY = 96


def _check(pred, y):
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ContractError(f"prediction shape {pred.shape} != target shape {y.shape}")
    if pred.ndim < 1 or pred.shape[-1] == 0:
        raise ContractError("need at least one forecast step")
    return pred, y


def mae_per_step(pred, y) -> np.ndarray:
    """Mean absolute error for every forecast step, averaged over samples and stations."""
    pred, y = _check(pred, y)
    err = np.abs(pred - y).reshape(-1, y.shape[-1])
    return err.mean(axis=0)


def rmse_per_step(pred, y) -> np.ndarray:
    pred, y = _check(pred, y)
    err = ((pred - y) ** 2).reshape(-1, y.shape[-1])
    return np.sqrt(err.mean(axis=0))


def horizons_for(tau_f: int) -> tuple[int, ...]:
    return tuple(h for h in HORIZONS if h <= tau_f)


def daily_rmse(pred, y, horizon: int, steps_per_day: int = STEPS_PER_DAY) -> np.ndarray:
    """RMSE of the ``horizon``-step forecast over consecutive chunks of one day.

    Samples are assumed to advance one step each, so ``steps_per_day`` samples
    cover a day.  A trailing partial day is dropped.
    """
    pred, y = _check(pred, y)
    e = (pred[..., horizon - 1] - y[..., horizon - 1]).reshape(pred.shape[0], -1)
    n_days = e.shape[0] // steps_per_day
    if n_days == 0:
        return np.zeros(0)
    e = e[: n_days * steps_per_day].reshape(n_days, -1)
    return np.sqrt((e ** 2).mean(axis=1))


def write_boxplot_csv(path, rows) -> None:
    """rows: iterable of (dataset, method, horizon, day_index, rmse)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "method", "horizon", "day_index", "rmse"])
        for ds, method, h, day, v in rows:
            w.writerow([ds, method, h, day, f"{v:.6f}"])


def boxplot_rows(dataset: str, method: str, pred, y):
    tau_f = np.asarray(y).shape[-1]
    for h in horizons_for(tau_f):
        for day, v in enumerate(daily_rmse(pred, y, h)):
            yield dataset, method, h, day, float(v)


@dataclass
class RunReport:
    """Errors of one run plus what is needed to reproduce it.

    ``timing`` is kept out of :meth:`to_json` by default so that reports of
    identical runs are byte-identical.
    """

    name: str
    fingerprint: str
    seed: int
    mae: dict[str, float]
    rmse: dict[str, float]
    mae_per_step: list[float]
    rmse_per_step: list[float]
    extra: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, name: str, fingerprint: str, seed: int, pred, y, extra=None,
                         timing=None) -> "RunReport":
        mae = mae_per_step(pred, y)
        rmse = rmse_per_step(pred, y)
        hs = horizons_for(len(mae))
        return cls(
            name=name, fingerprint=fingerprint, seed=int(seed),
            mae={str(h): float(mae[h - 1]) for h in hs},
            rmse={str(h): float(rmse[h - 1]) for h in hs},
            mae_per_step=[float(v) for v in mae], rmse_per_step=[float(v) for v in rmse],
            extra=dict(extra or {}), timing=dict(timing or {}),
        )

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("timing")
        return d

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"report is not valid JSON: {exc}") from None
        missing = [k for k in ("name", "fingerprint", "seed", "mae", "rmse", "mae_per_step",
                               "rmse_per_step") if k not in d]
        if missing:
            raise SchemaError(f"report lacks field(s): {', '.join(missing)}")
        return cls(**d)
