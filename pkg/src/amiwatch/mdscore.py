"""Mahalanobis-distance scoring with moving-average dynamic thresholds.

A reference frame fixes the mean vector and covariance. Each scored row gets
a distance ``d_m``; a right-aligned moving average ``mav`` over ``w`` rows
smooths it. Rows are flagged when ``d_m`` (``mav``) exceeds the q-quantile
of its own series; the combined flag requires both.

Three detection modes share these rules:

* :func:`detect` - thresholds from the whole scored series (offline).
* :func:`detect_trailing` - per-row thresholds from a trailing buffer, the
  batch twin of the streaming detector.
* :func:`stream_score` - one row at a time with bounded state.
"""
from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DimensionError, SingularCovarianceError
from .quantile import quantile_sorted

SCORE_FEATURES = ("consumption", "prediction", "lag1", "lag2", "day_shift", "temperature")
WINDOW = 24
THRESHOLD_BUFFER = 720
QUANTILE = 0.95
VERDICT_COLUMNS = ("timestamp", "d_m", "mav", "flag_md", "flag_mav", "flag_combined",
                   "md_threshold", "mav_threshold", "warming_up")


@dataclass(frozen=True)
class Calibration:
    mean: np.ndarray
    cov: np.ndarray
    inv_cov: np.ndarray
    features: tuple
    lam: float

    @property
    def dim(self):
        return self.mean.size

    def to_dict(self):
        return {"features": list(self.features), "lambda": self.lam,
                "mean": self.mean.tolist(), "cov": self.cov.tolist(),
                "inv_cov": self.inv_cov.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["cov"], float),
                   np.asarray(d["inv_cov"], float), tuple(d["features"]), float(d["lambda"]))


def calibrate(reference, lam: float | None = None, features=None) -> Calibration:
    """Mean, sample covariance and regularized inverse of a reference table.

    ``lam=None`` uses ``1e-8 * trace(cov) / dim``. ``lam=0`` refuses a
    rank-deficient covariance instead of inverting it.
    """
    if isinstance(reference, pd.DataFrame):
        features = tuple(features or reference.columns)
        X = reference[list(features)].to_numpy(dtype=np.float64)
    else:
        X = np.asarray(reference, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        features = tuple(features or (f"x{i}" for i in range(X.shape[1])))
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more rows than features ({n} <= {p})")
    if not np.isfinite(X).all():
        raise ValueError("reference contains non-finite values")
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    cov = (cov + cov.T) / 2.0
    if lam is None:
        lam = 1e-8 * float(np.trace(cov)) / p
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if lam == 0 and np.linalg.matrix_rank(cov) < p:
        raise SingularCovarianceError(
            "covariance is singular; pass a positive regularization lam")
    inv = np.linalg.inv(cov + lam * np.eye(p))
    return Calibration(mean, cov, (inv + inv.T) / 2.0, features, float(lam))


def mahalanobis(x, calibration: Calibration):
    """Distance of one vector (returns float) or each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != calibration.dim:
        raise DimensionError(f"expected {calibration.dim} features, got {X.shape[1]}")
    diff = X - calibration.mean
    d2 = np.einsum("ij,jk,ik->i", diff, calibration.inv_cov, diff)
    d = np.sqrt(np.maximum(d2, 0.0))
    return float(d[0]) if single else d


def window_mean(values) -> float:
    """Correctly rounded mean, independent of summation order."""
    return math.fsum(values) / len(values)


def moving_average(d_series, w: int = WINDOW) -> np.ndarray:
    """``mav[i] = mean(d[i:i + w])``; length ``n - w + 1``."""
    d = np.asarray(d_series, dtype=np.float64)
    if w < 1:
        raise ValueError("window must be at least 1")
    if w > d.size:
        raise ValueError(f"window {w} exceeds series length {d.size}")
    return np.array([window_mean(d[i:i + w]) for i in range(d.size - w + 1)])


def align_right(mav, n: int) -> np.ndarray:
    """Place each window mean on the window's last row; earlier rows are NaN."""
    mav = np.asarray(mav, dtype=np.float64)
    out = np.full(n, np.nan)
    out[n - mav.size:] = mav
    return out


def dynamic_thresholds(d_series, mav_series, q: float = QUANTILE):
    """q-quantiles of the distance and moving-average series (NaNs ignored)."""
    d = np.asarray(d_series, dtype=np.float64)
    m = np.asarray(mav_series, dtype=np.float64)
    d, m = d[~np.isnan(d)], m[~np.isnan(m)]
    if d.size == 0 or m.size == 0:
        raise ValueError("cannot threshold an empty series")
    return quantile_sorted(np.sort(d), q), quantile_sorted(np.sort(m), q)


def flag(d_series, mav_series, thresholds, timestamps=None, warming_up=None) -> pd.DataFrame:
    """Apply the strict-inequality rules row by row.

    ``mav_series`` must be aligned with ``d_series`` (see :func:`align_right`);
    NaN entries never flag. ``thresholds`` is a ``(md, mav)`` pair of scalars
    or of per-row arrays. Rows marked ``warming_up`` carry no flags.
    """
    d = np.asarray(d_series, dtype=np.float64)
    m = np.asarray(mav_series, dtype=np.float64)
    if d.shape != m.shape:
        raise DimensionError(f"misaligned series: {d.shape} vs {m.shape}")
    md_thr = np.broadcast_to(np.asarray(thresholds[0], dtype=np.float64), d.shape)
    mav_thr = np.broadcast_to(np.asarray(thresholds[1], dtype=np.float64), d.shape)
    warm = (np.zeros(d.shape, dtype=bool) if warming_up is None
            else np.asarray(warming_up, dtype=bool))
    with np.errstate(invalid="ignore"):
        f_md = (d > md_thr) & ~warm
        f_mav = (m > mav_thr) & ~warm
    if timestamps is None:
        timestamps = np.arange(d.size)
    return pd.DataFrame({
        "timestamp": timestamps, "d_m": d, "mav": m,
        "flag_md": f_md.astype(np.int64), "flag_mav": f_mav.astype(np.int64),
        "flag_combined": (f_md & f_mav).astype(np.int64),
        "md_threshold": md_thr, "mav_threshold": mav_thr, "warming_up": warm,
    })


def detect(d_series, w: int = WINDOW, q: float = QUANTILE, timestamps=None) -> pd.DataFrame:
    """Offline detection with thresholds taken over the whole series."""
    d = np.asarray(d_series, dtype=np.float64)
    mav = align_right(moving_average(d, w), d.size)
    return flag(d, mav, dynamic_thresholds(d, mav, q), timestamps)


def detect_trailing(d_series, w: int = WINDOW, q: float = QUANTILE,
                    buffer: int = THRESHOLD_BUFFER, timestamps=None) -> pd.DataFrame:
    """Causal detection: row t is judged against thresholds over rows <= t.

    The distance threshold uses the last ``buffer`` distances, the
    moving-average threshold the last ``buffer`` window means. The first
    ``w - 1`` rows are warming up.
    """
    d = np.asarray(d_series, dtype=np.float64)
    n = d.size
    mav = np.full(n, np.nan)
    md_thr = np.full(n, np.nan)
    mav_thr = np.full(n, np.nan)
    warm = np.arange(n) < w - 1
    if w < 1 or buffer < 1:
        raise ValueError("window and buffer must be positive")
    dist, means = _SortedWindow(buffer), _SortedWindow(buffer)
    for t in range(n):
        dist.push(float(d[t]))
        if t < w - 1:
            continue
        mav[t] = window_mean(d[t - w + 1:t + 1])
        means.push(float(mav[t]))
        md_thr[t] = quantile_sorted(dist.sorted, q)
        mav_thr[t] = quantile_sorted(means.sorted, q)
    return flag(d, mav, (md_thr, mav_thr), timestamps, warm)


@dataclass
class AnomalyVerdict:
    timestamp: object
    d_m: float
    mav: float | None
    flag_md: int
    flag_mav: int
    flag_combined: int
    md_threshold: float | None
    mav_threshold: float | None
    warming_up: bool


class _SortedWindow:
    """Trailing window with O(log n) lookup of order statistics."""

    def __init__(self, maxlen):
        self.maxlen = maxlen
        self.fifo = deque()
        self.sorted = []

    def push(self, v):
        self.fifo.append(v)
        bisect.insort(self.sorted, v)
        if len(self.fifo) > self.maxlen:
            old = self.fifo.popleft()
            del self.sorted[bisect.bisect_left(self.sorted, old)]

    def __len__(self):
        return len(self.fifo)


@dataclass
class StreamState:
    calibration: Calibration | None
    w: int = WINDOW
    q: float = QUANTILE
    buffer: int = THRESHOLD_BUFFER
    window: deque = field(default=None)
    distances: _SortedWindow = field(default=None)
    means: _SortedWindow = field(default=None)
    seen: int = 0

    def __post_init__(self):
        if self.w < 1 or self.buffer < 1:
            raise ValueError("window and buffer must be positive")
        self.window = deque(maxlen=self.w)
        self.distances = _SortedWindow(self.buffer)
        self.means = _SortedWindow(self.buffer)


def stream_score(point, state: StreamState, timestamp=None, distance=None):
    """Score one row and update ``state`` in place.

    ``point`` is the score vector; pass ``distance`` instead to skip the
    Mahalanobis step. Returns ``(verdict, state)``.
    """
    d = distance if distance is not None else mahalanobis(point, state.calibration)
    d = float(d)
    state.seen += 1
    state.window.append(d)
    state.distances.push(d)
    if len(state.window) < state.w:
        return AnomalyVerdict(timestamp, d, None, 0, 0, 0, None, None, True), state
    mav = window_mean(state.window)
    state.means.push(mav)
    md_thr = quantile_sorted(state.distances.sorted, state.q)
    mav_thr = quantile_sorted(state.means.sorted, state.q)
    f_md = int(d > md_thr)
    f_mav = int(mav > mav_thr)
    return AnomalyVerdict(timestamp, d, mav, f_md, f_mav, f_md & f_mav,
                          md_thr, mav_thr, False), state


def score_frame(frame: pd.DataFrame, prediction, features=SCORE_FEATURES) -> pd.DataFrame:
    """Attach model predictions and select the score-vector columns."""
    df = frame.assign(prediction=np.asarray(prediction, dtype=np.float64))
    missing = [f for f in features if f not in df.columns]
    if missing:
        raise DimensionError(f"score frame lacks columns {missing}")
    return df[list(features)]
