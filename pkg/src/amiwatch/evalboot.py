"""Regression error metrics and percentile-bootstrap confidence intervals.

Resamples draw (y, yhat) index pairs with replacement, so serial
correlation in a time series is ignored; intervals on autocorrelated
residuals come out too narrow.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .quantile import quantile_sorted


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} vs {yhat.size}")
    if y.size == 0:
        raise ValueError("need at least one pair")
    return y, yhat


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


METRICS = {"mae": mae, "rmse": rmse}


@dataclass(frozen=True)
class BootstrapReport:
    metric: str
    estimate: float
    ci_low: float
    ci_high: float
    level: float
    n_resamples: int
    n: int
    seed: int

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)


def bootstrap_ci(y, yhat, metric=mae, B: int = 1000, level: float = 0.95,
                 seed: int = 0) -> BootstrapReport:
    """Percentile interval of ``metric`` over ``B`` paired resamples.

    Resample ``b`` draws from its own child of ``SeedSequence(seed)``, so the
    result does not depend on the order in which resamples are evaluated.
    """
    if isinstance(metric, str):
        name, metric = metric, METRICS[metric]
    else:
        name = getattr(metric, "__name__", "metric")
    y, yhat = _pair(y, yhat)
    n = y.size
    if n < 10:
        raise ValueError(f"need at least 10 pairs, got {n}")
    if B < 2:
        raise ValueError("B must be at least 2")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    children = np.random.SeedSequence(seed).spawn(B)
    stats = np.empty(B)
    for b, child in enumerate(children):
        idx = np.random.default_rng(child).integers(0, n, size=n)
        stats[b] = metric(y[idx], yhat[idx])
    stats.sort()
    alpha = (1.0 - level) / 2.0
    return BootstrapReport(name, float(metric(y, yhat)), quantile_sorted(stats, alpha),
                           quantile_sorted(stats, 1.0 - alpha), float(level), int(B),
                           int(n), int(seed))
