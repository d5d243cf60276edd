"""Loading, joining, imputation and feature engineering for meter data.

Raw inputs are three CSV files:

* meter:   ``timestamp, meter_id, value`` (cumulative reading)
* weather: ``timestamp, site_id, temperature``
* holiday: ``date``

They are joined into a records frame with columns
``timestamp, meter_value, temperature, holiday`` (one row per hour), imputed,
and differenced into a :class:`FeatureFrame`.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (BoundaryError, InsufficientHistoryError, NoRowsError,
                     ParseError, SchemaError, UnimputableColumnError)

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("timestamp", "meter_value", "temperature", "holiday")
FEATURE_COLUMNS = (
    "consumption", "temperature", "holiday", "lag1", "lag2", "day_shift",
    "month_shift", "hour", "weekday", "month", "day",
)
LAGS = {"lag1": 1, "lag2": 2, "day_shift": 24, "month_shift": 720}
MONTH_SHIFT = LAGS["month_shift"]
DEFAULT_BOUNDARIES = (30000, 40000)
CONSUMPTION_CAP = 425.0


def _require(df, columns, name):
    for col in columns:
        if col not in df.columns:
            raise SchemaError(f"{name} file is missing required column {col!r}")


def _parse_ts(series, name):
    try:
        ts = pd.to_datetime(series, utc=True)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"unparseable timestamp in {name} file: {exc}") from exc
    return ts.dt.floor("h")


def _last_per_timestamp(df):
    df = df.sort_values("timestamp", kind="stable")
    dup = int(df.duplicated("timestamp", keep="last").sum())
    return df.drop_duplicates("timestamp", keep="last"), dup


def load_and_join(meter_csv, weather_csv=None, holiday_csv=None, *,
                  meter_id=None, site_id=None) -> pd.DataFrame:
    """Read the three inputs and join them on timestamp / date.

    Duplicate timestamps keep the last reading. Meter rows without a weather
    match get a missing temperature, left for :func:`mice_impute`.
    """
    meter = pd.read_csv(meter_csv)
    _require(meter, ("timestamp", "meter_id", "value"), "meter")
    if meter_id is None:
        ids = meter["meter_id"].unique()
        if len(ids) > 1:
            raise SchemaError(
                f"meter file holds {len(ids)} meters; select one with meter_id")
    else:
        meter = meter[meter["meter_id"].astype(str) == str(meter_id)]
    if meter.empty:
        raise NoRowsError(f"no rows for meter {meter_id!r}")
    meter = meter.assign(timestamp=_parse_ts(meter["timestamp"], "meter"))
    meter, n_dup = _last_per_timestamp(meter)
    if n_dup:
        log.info("collapsed %d duplicate meter timestamps", n_dup)
    values = pd.to_numeric(meter["value"], errors="coerce")
    out = pd.DataFrame({"timestamp": meter["timestamp"].to_numpy(),
                        "meter_value": values.to_numpy(dtype=float)})

    if weather_csv is not None:
        weather = pd.read_csv(weather_csv)
        _require(weather, ("timestamp", "site_id", "temperature"), "weather")
        if site_id is not None:
            weather = weather[weather["site_id"].astype(str) == str(site_id)]
        weather = weather.assign(timestamp=_parse_ts(weather["timestamp"], "weather"))
        weather, _ = _last_per_timestamp(weather)
        weather = weather[["timestamp", "temperature"]].assign(
            temperature=lambda d: pd.to_numeric(d["temperature"], errors="coerce"))
        out = out.merge(weather, on="timestamp", how="left")
    else:
        out["temperature"] = np.nan

    if holiday_csv is not None:
        hol = pd.read_csv(holiday_csv)
        _require(hol, ("date",), "holiday")
        days = set(pd.to_datetime(hol["date"]).dt.date)
        dates = pd.DatetimeIndex(out["timestamp"]).date
        out["holiday"] = np.array([d in days for d in dates], dtype=np.int64)
    else:
        out["holiday"] = 0
    out.attrs["duplicates_dropped"] = n_dup
    return out.reset_index(drop=True)


def mice_impute(frame: pd.DataFrame, max_iters: int = 10, tol: float = 1e-4,
                seed: int = 0) -> pd.DataFrame:
    """Chained-equations imputation with an OLS model per column.

    Missing cells start as random draws from the column's observed values.
    Each sweep regresses every incomplete column on all other columns (with
    an intercept) over its observed rows and replaces its missing cells
    with the fitted values. Sweeps stop once the largest change to any
    imputed cell falls below ``tol``, or after ``max_iters`` sweeps.
    """
    try:
        X = frame.apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"non-numeric cell in imputation frame: {exc}") from exc
    missing = np.isnan(X)
    out = frame.copy()
    out.attrs["mice"] = {"iterations": 0, "last_change": 0.0,
                         "imputed_cells": int(missing.sum())}
    if not missing.any():
        return out
    for j, col in enumerate(frame.columns):
        if missing[:, j].all():
            raise UnimputableColumnError(f"column {col!r} has no observed values")
    if missing.any(axis=0).all():
        raise UnimputableColumnError("imputation needs at least one fully observed column")

    rng = np.random.default_rng(seed)
    targets = [j for j in range(X.shape[1]) if missing[:, j].any()]
    for j in targets:
        observed = X[~missing[:, j], j]
        X[missing[:, j], j] = rng.choice(observed, size=int(missing[:, j].sum()))

    n = X.shape[0]
    change = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        change = 0.0
        for j in targets:
            rows = missing[:, j]
            others = [k for k in range(X.shape[1]) if k != j]
            A = np.column_stack([np.ones(n), X[:, others]])
            beta, *_ = np.linalg.lstsq(A[~rows], X[~rows, j], rcond=None)
            pred = A[rows] @ beta
            change = max(change, float(np.max(np.abs(pred - X[rows, j]))))
            X[rows, j] = pred
        if change < tol:
            break
    for j in targets:
        out[frame.columns[j]] = X[:, j]
    out.attrs["mice"] = {"iterations": it, "last_change": change,
                         "imputed_cells": int(missing.sum())}
    return out


def impute_records(records: pd.DataFrame, max_iters: int = 10, tol: float = 1e-4,
                   seed: int = 0) -> pd.DataFrame:
    """Impute meter_value and temperature using calendar helper columns."""
    ts = pd.DatetimeIndex(records["timestamp"])
    hour_angle = 2 * np.pi * ts.hour.to_numpy() / 24.0
    year_angle = 2 * np.pi * ts.dayofyear.to_numpy() / 365.25
    helper = pd.DataFrame({
        "meter_value": records["meter_value"].to_numpy(dtype=float),
        "temperature": records["temperature"].to_numpy(dtype=float),
        "holiday": records["holiday"].to_numpy(dtype=float),
        "t_index": (ts - ts[0]) / pd.Timedelta(hours=1),
        "hour_sin": np.sin(hour_angle), "hour_cos": np.cos(hour_angle),
        "year_sin": np.sin(year_angle), "year_cos": np.cos(year_angle),
    })
    filled = mice_impute(helper, max_iters=max_iters, tol=tol, seed=seed)
    out = records.copy()
    out["meter_value"] = filled["meter_value"].to_numpy()
    out["temperature"] = filled["temperature"].to_numpy()
    out.attrs.update(records.attrs)
    out.attrs["mice"] = filled.attrs["mice"]
    return out


def consumption_from_meter(values) -> np.ndarray:
    """First difference of cumulative readings."""
    return np.diff(np.asarray(values, dtype=np.float64))


def calendar_columns(ts: pd.DatetimeIndex) -> dict:
    return {"hour": ts.hour.to_numpy(dtype=np.int64),
            "weekday": ts.weekday.to_numpy(dtype=np.int64),
            "month": ts.month.to_numpy(dtype=np.int64),
            "day": ts.day.to_numpy(dtype=np.int64)}


@dataclass
class FeatureFrame:
    """Engineered features indexed by hourly timestamp, plus split boundaries."""

    data: pd.DataFrame
    train_end: int = DEFAULT_BOUNDARIES[0]
    test_end: int = DEFAULT_BOUNDARIES[1]
    report: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.data)

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return pd.DatetimeIndex(self.data.index)

    def split(self):
        return split(self.data, self.train_end, self.test_end)

    def split_labels(self) -> np.ndarray:
        tr, te = resolve_boundaries(len(self), self.train_end, self.test_end)
        labels = np.empty(len(self), dtype=object)
        labels[:tr] = "train"
        labels[tr:te] = "test"
        labels[te:] = "validation"
        return labels

    def to_csv(self, path):
        df = self.data.reset_index()
        df["split"] = self.split_labels()
        df.to_csv(path, index=False, lineterminator="\n")  # floats round-trip exactly

    @classmethod
    def from_csv(cls, path):
        df = pd.read_csv(path, float_precision="round_trip")
        _require(df, ("timestamp",) + FEATURE_COLUMNS, "feature")
        df["timestamp"] = pd.to_datetime(df["timestamp"], utc=True)
        labels = df.pop("split") if "split" in df.columns else None
        data = df.set_index("timestamp")[list(FEATURE_COLUMNS)]
        if labels is not None:
            train_end = int((labels == "train").sum())
            test_end = train_end + int((labels == "test").sum())
            return cls(data, train_end, test_end)
        return cls(data)


def build_features(records: pd.DataFrame, cap: float | None = CONSUMPTION_CAP,
                   history: int = MONTH_SHIFT) -> FeatureFrame:
    """Difference, clean, and lag an imputed records frame.

    Steps, in order: consumption diffs over consecutive readings; drop diffs
    that span more than one hour or are negative (data errors); clip at
    ``cap``; positional lags over the retained rows; drop the first
    ``history`` rows, which lack a full month-shift history.
    """
    if len(records) < history + 2:
        raise InsufficientHistoryError(
            f"need at least {history + 2} hourly records, got {len(records)}")
    rec = records.sort_values("timestamp", kind="stable").reset_index(drop=True)
    if rec[["meter_value", "temperature"]].isna().any().any():
        raise ValueError("records still contain missing values; impute first")
    ts = pd.DatetimeIndex(rec["timestamp"])
    if not ts.is_monotonic_increasing or ts.has_duplicates:
        raise ValueError("timestamps must be strictly increasing")

    cons = consumption_from_meter(rec["meter_value"])
    step_hours = np.diff(ts.asi8) / 3.6e12
    irregular = step_hours != 1.0
    negative = (cons < 0) & ~irregular
    keep = ~(irregular | negative)
    if negative.any():
        log.warning("dropped %d negative consumption diffs", int(negative.sum()))
    if irregular.any():
        log.warning("dropped %d diffs spanning a gap", int(irregular.sum()))
    cons = cons[keep]
    n_capped = 0
    if cap is not None:
        n_capped = int((cons > cap).sum())
        cons = np.minimum(cons, cap)

    idx = ts[1:][keep]
    df = pd.DataFrame({"consumption": cons,
                       "temperature": rec["temperature"].to_numpy(float)[1:][keep],
                       "holiday": rec["holiday"].to_numpy(np.int64)[1:][keep]},
                      index=pd.DatetimeIndex(idx, name="timestamp"))
    s = pd.Series(cons)
    for name, k in LAGS.items():
        df[name] = s.shift(k).to_numpy()
    for name, col in calendar_columns(pd.DatetimeIndex(df.index)).items():
        df[name] = col
    df = df.iloc[history:]
    if df.empty:
        raise InsufficientHistoryError("no rows left after dropping the lag warm-up")
    df = df[list(FEATURE_COLUMNS)]
    report = {"records": len(records), "rows": len(df),
              "negative_dropped": int(negative.sum()),
              "gap_dropped": int(irregular.sum()), "capped": n_capped,
              "duplicates_dropped": int(records.attrs.get("duplicates_dropped", 0))}
    if "mice" in records.attrs:
        report["mice"] = dict(records.attrs["mice"])
    return FeatureFrame(df, report=report)


class OnlineFeatureBuilder:
    """Incremental twin of :func:`build_features` for one reading at a time.

    ``push`` returns ``(row, status)``. ``row`` is a dict of
    :data:`FEATURE_COLUMNS` once ``history + 1`` clean diffs have been seen,
    else ``None``; ``status`` says why (``history``, ``gap``, ``negative``,
    ``out_of_order``, ``no_temperature``) or is ``ok``. A missing
    temperature repeats the last observed one.
    """

    def __init__(self, cap: float | None = CONSUMPTION_CAP, history: int = MONTH_SHIFT):
        if history < max(LAGS.values()):
            raise ValueError(f"history must be at least {max(LAGS.values())}")
        self.cap = cap
        self.history = history
        self.prev_ts = None
        self.prev_value = None
        self.temperature = None
        self.cons = deque(maxlen=history + 1)

    @staticmethod
    def _hour(ts):
        t = pd.Timestamp(ts)
        t = t.tz_localize("UTC") if t.tzinfo is None else t.tz_convert("UTC")
        return t.floor("h")

    def push(self, ts, value, temperature=None, holiday=0):
        ts = self._hour(ts)
        value = float(value)
        if temperature is not None and not math.isnan(float(temperature)):
            self.temperature = float(temperature)
        if self.prev_ts is not None and ts <= self.prev_ts:
            return None, "out_of_order"
        prev_ts, prev_value = self.prev_ts, self.prev_value
        self.prev_ts, self.prev_value = ts, value
        if prev_ts is None:
            return None, "history"
        if ts - prev_ts != pd.Timedelta(hours=1):
            return None, "gap"
        diff = value - prev_value
        if diff < 0:
            return None, "negative"
        if self.cap is not None:
            diff = min(diff, self.cap)
        self.cons.append(diff)
        if len(self.cons) <= self.history:
            return None, "history"
        if self.temperature is None:
            return None, "no_temperature"
        c = self.cons
        row = {"consumption": c[-1], "temperature": self.temperature,
               "holiday": int(holiday)}
        for name, k in LAGS.items():
            row[name] = c[-1 - k]
        row.update(hour=ts.hour, weekday=ts.weekday(), month=ts.month, day=ts.day)
        return {"timestamp": ts, **{k: row[k] for k in FEATURE_COLUMNS}}, "ok"


def resolve_boundaries(n, train_end=DEFAULT_BOUNDARIES[0], test_end=DEFAULT_BOUNDARIES[1]):
    """Turn boundaries into row indices; values in (0, 1) are read as fractions."""
    def _idx(b):
        if isinstance(b, float) and 0.0 < b < 1.0:
            return int(round(b * n))
        return int(b)
    tr, te = _idx(train_end), _idx(test_end)
    if n < 3:
        raise BoundaryError(f"need at least 3 rows to split, got {n}")
    if te > n or tr > n:
        raise BoundaryError(f"boundary exceeds row count {n}: ({tr}, {te})")
    if not 0 < tr < te < n:
        raise BoundaryError(f"boundaries ({tr}, {te}) leave an empty slice of {n} rows")
    return tr, te


def split(frame, train_end=DEFAULT_BOUNDARIES[0], test_end=DEFAULT_BOUNDARIES[1]):
    """Chronological (train, test, validation) slices ``[:a], [a:b], [b:]``."""
    data = frame.data if isinstance(frame, FeatureFrame) else frame
    tr, te = resolve_boundaries(len(data), train_end, test_end)
    return data.iloc[:tr], data.iloc[tr:te], data.iloc[te:]


# -- synthetic data ---------------------------------------------------------

HOLIDAYS = ((1, 1), (1, 21), (5, 27), (7, 4), (9, 2), (11, 28), (12, 25))


@dataclass
class SyntheticSeries:
    records: pd.DataFrame
    injected: pd.DataFrame
    clean_envelope: float
    meter_id: str = "synthetic-38"
    site_id: str = "38"

    def spike_timestamps(self) -> pd.DatetimeIndex:
        sel = self.injected[self.injected["kind"] == "spike"]
        return pd.DatetimeIndex(sel["timestamp"])

    def write_csvs(self, directory) -> dict:
        """Write meter/weather/holiday CSVs in the documented input schemas."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        iso = self.records["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%SZ")
        paths = {"meter": directory / "meter.csv",
                 "weather": directory / "weather.csv",
                 "holiday": directory / "holiday.csv"}
        pd.DataFrame({"timestamp": iso, "meter_id": self.meter_id,
                      "value": self.records["meter_value"]}).to_csv(
            paths["meter"], index=False, float_format="%.6f")
        pd.DataFrame({"timestamp": iso, "site_id": self.site_id,
                      "temperature": self.records["temperature"]}).to_csv(
            paths["weather"], index=False, float_format="%.4f")
        days = sorted(set(self.records.loc[self.records["holiday"] == 1, "timestamp"]
                          .dt.strftime("%Y-%m-%d")))
        pd.DataFrame({"date": days}).to_csv(paths["holiday"], index=False)
        return paths


def _seasonal_bump(doy, center, width):
    d = np.abs(doy - center)
    d = np.minimum(d, 365.25 - d)
    return np.exp(-0.5 * (d / width) ** 2)


def _ar1(rng, n, phi, scale):
    z = rng.normal(scale=scale, size=n)
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = phi * acc + z[i]
        out[i] = acc
    return out


def synthesize(n_rows: int, seed: int = 0, *, spike_rate: float = 0.005,
               flat_rate: float = 0.001, missing_rate: float = 0.002,
               spike_sigmas: tuple = (6.0, 9.0), start="2013-01-01") -> SyntheticSeries:
    """Hourly cumulative meter series with a commercial-building load profile.

    Consumption peaks at midday, drops at weekends and on holidays, and has
    seasonal peaks in Jan-Feb and Jun-Jul, a persistent AR(1) level and
    white noise. Its mean and spread are tuned to roughly 138 / 51 units.
    Injected anomalies: upward spikes of ``spike_sigmas`` standard
    deviations, flat-lines (zero consumption for 3-8 hours), and missing
    temperature cells. The ``injected`` frame lists every injected timestamp.
    """
    if n_rows < 1000:
        raise ValueError("n_rows must be at least 1000")
    for name, rate in (("spike_rate", spike_rate), ("flat_rate", flat_rate),
                       ("missing_rate", missing_rate)):
        if not 0.0 <= rate < 0.5:
            raise ValueError(f"{name} must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    ts = pd.date_range(start, periods=n_rows, freq="h", tz="UTC")
    hour = ts.hour.to_numpy()
    doy = ts.dayofyear.to_numpy().astype(float)
    holiday = np.array([(m, d) in HOLIDAYS for m, d in zip(ts.month, ts.day)],
                       dtype=np.int64)

    daily = 0.62 + 0.70 * np.exp(-0.5 * ((hour - 13.5) / 3.5) ** 2)
    week = np.where((ts.weekday.to_numpy() >= 5) | (holiday == 1), 0.72, 1.0)
    season = 0.88 + 0.18 * _seasonal_bump(doy, 35, 25) + 0.30 * _seasonal_bump(doy, 190, 30)
    temperature = (12.5 - 9.5 * np.cos(2 * np.pi * (doy - 20) / 365.25)
                   + 3.0 * np.sin(2 * np.pi * (hour - 9) / 24) + _ar1(rng, n_rows, 0.9, 2.0))
    level = _ar1(rng, n_rows, 0.97, 0.03)
    clean = 176.0 * daily * week * season * (1.0 + level)
    clean = np.clip(clean + rng.normal(scale=8.0, size=n_rows), 0.0, None)
    envelope = float(clean.max())

    cons = clean.copy()
    kinds = []
    taken = np.zeros(n_rows, dtype=bool)
    taken[0] = True
    n_spikes = int(round(spike_rate * n_rows))
    if n_spikes:
        sigma = float(clean.std())
        cand = rng.permutation(np.arange(1, n_rows))
        chosen = []
        for i in cand:
            if len(chosen) == n_spikes:
                break
            if taken[max(0, i - 3): i + 4].any():
                continue
            taken[i] = True
            chosen.append(i)
        chosen = np.sort(np.array(chosen, dtype=np.int64))
        cons[chosen] += rng.uniform(*spike_sigmas, size=len(chosen)) * sigma
        kinds += [(i, "spike") for i in chosen]
    n_flats = int(round(flat_rate * n_rows / 5.0))
    for _ in range(n_flats):
        length = int(rng.integers(3, 9))
        i = int(rng.integers(1, n_rows - length))
        if taken[max(0, i - 3): i + length + 3].any():
            continue
        taken[i:i + length] = True
        cons[i:i + length] = 0.0
        kinds += [(j, "flat") for j in range(i, i + length)]
    n_missing = int(round(missing_rate * n_rows))
    if n_missing:
        miss = np.sort(rng.choice(np.arange(1, n_rows), size=n_missing, replace=False))
        temperature[miss] = np.nan
        kinds += [(int(i), "missing") for i in miss]

    meter_value = 10000.0 + np.cumsum(np.concatenate([[0.0], cons[1:]]))
    records = pd.DataFrame({"timestamp": ts, "meter_value": meter_value,
                            "temperature": temperature, "holiday": holiday})
    kinds.sort()
    injected = pd.DataFrame({"timestamp": ts[[i for i, _ in kinds]],
                             "kind": [k for _, k in kinds]})
    return SyntheticSeries(records, injected, envelope)
