"""Wind power datasets: synthetic generator, CSV ingestion, windowing, splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ContractError, SchemaError

CSV_COLUMNS = ("timestamp", "station_id", "power_mw", "nwp_wind_speed", "nwp_pressure",
               "nwp_temperature")
OPTIONAL_COLUMNS = ("capacity_mw",)
NWP_COLUMNS = CSV_COLUMNS[3:]


@dataclass
class Sample:
    """One window: history X (C, tau_h), NWP Z (C, n, tau_n), target Y (C, tau_f)."""

    X: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    start: np.datetime64
    capacities: np.ndarray


@dataclass
class SeriesFrame:
    """Aligned multi-station series: power (T, C), nwp (T, C, n) at ``times`` (T,)."""

    times: np.ndarray
    power: np.ndarray
    nwp: np.ndarray
    capacities: np.ndarray
    station_ids: list[str]
    interval: int = 15
    calm: np.ndarray | None = None  # generator diagnostics, absent for CSV input
    speed: np.ndarray | None = None


@dataclass
class WindDataset:
    """Sliding-window samples stored as stacked arrays.

    ``start[i]`` is the timestamp of the first history step of sample ``i``.
    """

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    start: np.ndarray
    capacities: np.ndarray
    interval: int = 15
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.x[i], self.z[i], self.y[i], self.start[i], self.capacities)

    @property
    def tau_h(self) -> int:
        return self.x.shape[-1]

    @property
    def tau_f(self) -> int:
        return self.y.shape[-1]

    @property
    def tau_n(self) -> int:
        return self.z.shape[-1]

    @property
    def n_stations(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "WindDataset":
        idx = np.asarray(idx)
        return WindDataset(self.x[idx], self.z[idx], self.y[idx], self.start[idx],
                           self.capacities, self.interval)

    def window_times(self, i: int) -> np.ndarray:
        """Every timestamp touched by sample ``i`` (history, target and NWP)."""
        step = np.timedelta64(self.interval, "m")
        n = self.tau_h + max(self.tau_f, self.tau_n)
        return self.start[i] + step * np.arange(n)


# --------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class GeneratorConfig:
    n_stations: int = 5
    capacity_min: float = 50.0
    capacity_max: float = 200.0
    mean_speed: float = 9.0
    ar_phi: tuple = (1.9, -0.905)
    speed_std: float = 2.5
    local_share: float = 0.6
    diurnal_amplitude: float = 2.5
    p_calm_enter: float = 0.003
    p_calm_exit: float = 0.10
    calm_factor: float = 0.25
    station_noise: float = 0.02
    nwp_noise: float = 0.6
    interval: int = 15
    burn_in: int = 500
    start: str = "2020-03-01T00:00"
    seed: int = 0

    @property
    def calm_stationary(self) -> float:
        """Long-run fraction of steps spent in the calm regime."""
        return self.p_calm_enter / (self.p_calm_enter + self.p_calm_exit)


def power_curve(speed: np.ndarray, cut_in: np.ndarray, rated: np.ndarray) -> np.ndarray:
    """Monotone cubic ramp from cut-in to rated speed, as a fraction of capacity."""
    frac = np.clip((speed - cut_in) / (rated - cut_in), 0.0, 1.0)
    return frac ** 3


def _ar2_stationary_std(phi1: float, phi2: float) -> float:
    return math.sqrt((1 - phi2) / ((1 + phi2) * ((1 - phi2) ** 2 - phi1 ** 2)))


def generate_series(cfg: GeneratorConfig, n_steps: int) -> SeriesFrame:
    """Simulate ``n_steps`` aligned steps of latent wind, power and NWP.

    Latent speed per station = mean + regional AR(2) + local AR(2) + diurnal
    sinusoid, damped during the regional calm regime (a two-state Markov
    chain).  Calm steps produce exactly zero power.  NWP features are noisy
    functions of the latent speed at the same timestamp, so a window of future
    NWP leads the power it explains.
    """
    rng = np.random.default_rng([cfg.seed, 0xDA7A])
    c = cfg.n_stations
    total = n_steps + cfg.burn_in
    phi1, phi2 = cfg.ar_phi
    # unit stationary variance for both AR(2) components
    unit = 1.0 / _ar2_stationary_std(phi1, phi2)
    regional = _kernels.ar2(rng.standard_normal(total) * unit, phi1, phi2)
    local = np.stack([_kernels.ar2(rng.standard_normal(total) * unit, phi1, phi2)
                      for _ in range(c)], axis=1)
    calm = _kernels.markov2(rng.random(total), cfg.p_calm_enter, cfg.p_calm_exit,
                            int(rng.random() < cfg.calm_stationary)).astype(bool)

    caps = np.round(np.linspace(cfg.capacity_min, cfg.capacity_max, c), 1)
    caps = caps[rng.permutation(c)]
    station_mean = cfg.mean_speed + rng.uniform(-1.0, 1.0, c)
    phase = rng.uniform(0, 2 * np.pi, c)
    cut_in = rng.uniform(2.5, 3.5, c)
    rated = rng.uniform(11.0, 13.0, c)

    steps_per_day = 24 * 60 // cfg.interval
    t = np.arange(total)
    day = 2 * np.pi * (t % steps_per_day) / steps_per_day
    diurnal = cfg.diurnal_amplitude * np.sin(day[:, None] + phase[None, :])
    share = cfg.local_share
    speed = (station_mean + diurnal
             + cfg.speed_std * (math.sqrt(1 - share ** 2) * regional[:, None] + share * local))
    speed = np.where(calm[:, None], cfg.calm_factor * speed, speed)
    speed = np.maximum(speed, 0.0)

    frac = power_curve(speed, cut_in, rated) + cfg.station_noise * rng.standard_normal((total, c))
    power = np.clip(frac, 0.0, 1.0) * caps
    power[calm] = 0.0

    nwp_speed = np.maximum(speed + cfg.nwp_noise * rng.standard_normal((total, c)), 0.0)
    pressure = 1013.0 - 0.9 * (speed - station_mean) + 0.8 * rng.standard_normal((total, c))
    temperature = 12.0 + 6.0 * np.sin(day - 2.0)[:, None] - 0.3 * (speed - station_mean) \
        + 0.5 * rng.standard_normal((total, c))
    nwp = np.stack([nwp_speed, pressure, temperature], axis=-1)

    start = np.datetime64(cfg.start, "m")
    times = start + np.timedelta64(cfg.interval, "m") * np.arange(n_steps)
    sl = slice(cfg.burn_in, None)
    return SeriesFrame(times, power[sl], nwp[sl], caps, [f"S{i + 1}" for i in range(c)],
                       cfg.interval, calm=calm[sl], speed=speed[sl])


def windows_from_series(frame: SeriesFrame, tau_h: int = 96, tau_f: int = 16,
                        tau_n: int = 16) -> WindDataset:
    """Sliding windows advancing one step; windows never span a time gap."""
    step = np.timedelta64(frame.interval, "m")
    span = tau_h + max(tau_f, tau_n)
    breaks = np.nonzero(np.diff(frame.times) != step)[0] + 1
    bounds = np.concatenate([[0], breaks, [len(frame.times)]])
    origins = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        origins.extend(range(a, b - span + 1))
    origins = np.array(origins, dtype=np.int64)
    c = frame.power.shape[1]
    n = frame.nwp.shape[2]
    if len(origins) == 0:
        return WindDataset(np.zeros((0, c, tau_h)), np.zeros((0, c, n, tau_n)),
                           np.zeros((0, c, tau_f)), np.zeros(0, dtype="datetime64[m]"),
                           frame.capacities, frame.interval)
    hist = origins[:, None] + np.arange(tau_h)[None, :]
    fut = origins[:, None] + tau_h + np.arange(tau_f)[None, :]
    nwp_t = origins[:, None] + tau_h + np.arange(tau_n)[None, :]
    x = frame.power[hist].transpose(0, 2, 1)
    y = frame.power[fut].transpose(0, 2, 1)
    z = frame.nwp[nwp_t].transpose(0, 2, 3, 1)
    return WindDataset(np.ascontiguousarray(x), np.ascontiguousarray(z), np.ascontiguousarray(y),
                       frame.times[origins], frame.capacities.copy(), frame.interval)


def generate_dataset(cfg: GeneratorConfig, n_samples: int = 2048, tau_h: int = 96,
                     tau_f: int = 16, tau_n: int = 16) -> WindDataset:
    """Deterministic (per seed) synthetic dataset of ``n_samples`` windows."""
    frame = generate_series(cfg, n_samples + tau_h + max(tau_f, tau_n) - 1)
    return windows_from_series(frame, tau_h, tau_f, tau_n)


# --------------------------------------------------------------------------
# CSV


def write_csv(frame: SeriesFrame, path) -> None:
    """One row per (timestamp, station); includes the optional capacity column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS + OPTIONAL_COLUMNS)
        for ti, ts in enumerate(frame.times):
            stamp = str(np.datetime_as_string(ts, unit="s"))
            for ci, sid in enumerate(frame.station_ids):
                w.writerow([stamp, sid, f"{frame.power[ti, ci]:.6f}",
                            *(f"{v:.6f}" for v in frame.nwp[ti, ci]),
                            f"{frame.capacities[ci]:.6f}"])


def _parse_float(row: dict, col: str, lineno: int) -> float:
    raw = row.get(col)
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise SchemaError(f"row {lineno}, column {col}: not a number: {raw!r}") from None
    if not math.isfinite(v):
        raise SchemaError(f"row {lineno}, column {col}: non-finite value {raw!r}")
    return v


def read_series_csv(path, interval: int = 15) -> SeriesFrame:
    """Parse and validate the station CSV into an aligned frame.

    Stations are aligned on the timestamps every station reports.  Without a
    ``capacity_mw`` column a station's capacity is its largest observed power.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        extra = [c for c in header if c not in CSV_COLUMNS + OPTIONAL_COLUMNS]
        if extra:
            raise SchemaError(f"{path}: unexpected column(s) {extra}")
        has_cap = "capacity_mw" in header
        per_station: dict[str, dict] = {}
        last_time: dict[str, datetime] = {}
        caps: dict[str, float] = {}
        for lineno, row in enumerate(reader, start=2):
            raw_ts = row.get("timestamp") or ""
            try:
                ts = datetime.fromisoformat(raw_ts.strip())
            except ValueError:
                raise SchemaError(f"row {lineno}, column timestamp: not ISO-8601: {raw_ts!r}") from None
            sid = (row.get("station_id") or "").strip()
            if not sid:
                raise SchemaError(f"row {lineno}, column station_id: empty")
            power = _parse_float(row, "power_mw", lineno)
            if power < 0:
                raise SchemaError(f"row {lineno}, column power_mw: negative power {power}")
            nwp = [_parse_float(row, c, lineno) for c in NWP_COLUMNS]
            if has_cap:
                cap = _parse_float(row, "capacity_mw", lineno)
                if cap <= 0:
                    raise SchemaError(f"row {lineno}, column capacity_mw: must be positive")
                if power > cap:
                    raise SchemaError(f"row {lineno}, column power_mw: {power} exceeds capacity {cap}")
                caps[sid] = cap
            prev = last_time.get(sid)
            if prev is not None and ts <= prev:
                raise SchemaError(
                    f"row {lineno}, column timestamp: non-monotone time for station {sid} "
                    f"({ts.isoformat()} after {prev.isoformat()})"
                )
            last_time[sid] = ts
            per_station.setdefault(sid, {})[np.datetime64(ts, "m")] = (power, nwp)
    if not per_station:
        raise SchemaError(f"{path}: no data rows")
    ids = list(per_station)
    common = set(per_station[ids[0]])
    for sid in ids[1:]:
        common &= set(per_station[sid])
    times = np.array(sorted(common), dtype="datetime64[m]")
    power = np.array([[per_station[s][t][0] for s in ids] for t in times]).reshape(len(times), len(ids))
    nwp = np.array([[per_station[s][t][1] for s in ids] for t in times]).reshape(len(times), len(ids), 3)
    if has_cap:
        capacities = np.array([caps[s] for s in ids])
    else:
        capacities = np.array([max(v[0] for v in per_station[s].values()) for s in ids])
        capacities = np.maximum(capacities, 1e-6)
    return SeriesFrame(times, power, nwp, capacities, ids, interval)


def ingest_csv(path, tau_h: int = 96, tau_f: int = 16, tau_n: int = 16,
               interval: int = 15) -> WindDataset:
    return windows_from_series(read_series_csv(path, interval), tau_h, tau_f, tau_n)


# --------------------------------------------------------------------------
# splitting


def split_sizes(n: int) -> tuple[int, int, int]:
    """Chronological 3:1:1 sizes; train and validation rounded, test takes the rest."""
    if n < 5:
        raise ContractError(f"need at least 5 samples to split 3:1:1, got {n}")
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    return n_train, n_val, n - n_train - n_val


def split(ds: WindDataset) -> tuple[WindDataset, WindDataset, WindDataset]:
    n_train, n_val, _ = split_sizes(len(ds))
    idx = np.arange(len(ds))
    return (ds.subset(idx[:n_train]), ds.subset(idx[n_train:n_train + n_val]),
            ds.subset(idx[n_train + n_val:]))
