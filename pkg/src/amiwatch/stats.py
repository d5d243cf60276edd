"""Descriptive statistics and normal-reference goodness-of-fit tests."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy.special import ndtr

from .errors import DegenerateDistributionError
from .quantile import quantile_sorted

AD_SIGNIFICANCE_LEVELS = (15.0, 10.0, 5.0, 2.5, 1.0)
AD_CRITICAL_VALUES = (0.576, 0.656, 0.787, 0.918, 1.092)
KS_TERMS = 100
_CDF_EPS = 1e-15


@dataclass
class SummaryRow:
    column: str
    count: int
    mean: float
    std: float
    min: float
    p25: float
    median: float
    p75: float
    max: float


@dataclass
class NormalityReport:
    n: int
    ks_statistic: float
    ks_pvalue: float
    ad_statistic: float
    ad_critical_values: tuple = AD_CRITICAL_VALUES
    ad_significance_levels: tuple = AD_SIGNIFICANCE_LEVELS

    @property
    def normal_at_5pct(self) -> bool:
        """False when either test rejects normality at the 5% level."""
        crit = self.ad_critical_values[self.ad_significance_levels.index(5.0)]
        return self.ks_pvalue >= 0.05 and self.ad_statistic <= crit

    def to_dict(self):
        out = asdict(self)
        out["ad_critical_values"] = list(self.ad_critical_values)
        out["ad_significance_levels"] = list(self.ad_significance_levels)
        out["normal_at_5pct"] = self.normal_at_5pct
        return out


def _as_1d(values):
    return np.asarray(values, dtype=np.float64).ravel()


def summarize(frame) -> list[SummaryRow]:
    """One summary row per column; std uses the n-1 denominator."""
    df = frame if isinstance(frame, pd.DataFrame) else pd.DataFrame(frame)
    rows = []
    for col in df.columns:
        v = np.sort(_as_1d(df[col]))
        if v.size == 0:
            raise ValueError(f"column {col!r} is empty")
        std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
        rows.append(SummaryRow(str(col), int(v.size), float(np.mean(v)), std,
                               float(v[0]), quantile_sorted(v, 0.25),
                               quantile_sorted(v, 0.5), quantile_sorted(v, 0.75),
                               float(v[-1])))
    return rows


def pearson_matrix(frame) -> np.ndarray:
    """Pearson correlations; rows/columns of constant columns are NaN."""
    X = np.asarray(frame, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D table with at least two rows")
    Xc = X - X.mean(axis=0)
    ss = np.sqrt((Xc * Xc).sum(axis=0))
    constant = ss == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        Z = Xc / ss
    C = Z.T @ Z
    C = np.clip((C + C.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    C[constant, :] = np.nan
    C[:, constant] = np.nan
    return C


def _fit_normal(values, min_n):
    x = _as_1d(values)
    if x.size < min_n:
        raise ValueError(f"need at least {min_n} values, got {x.size}")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise DegenerateDistributionError("zero variance: a normal fit is undefined")
    return x, float(np.mean(x)), sd


def kolmogorov_sf(lam: float, terms: int = KS_TERMS) -> float:
    """Survival function of the asymptotic Kolmogorov distribution.

    Uses the alternating series for large arguments and the Jacobi theta
    form for small ones; either converges to ~1e-16 well inside ``terms``.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        s = 0.0
        for k in range(1, terms + 1):
            s += math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8 * lam * lam))
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / lam * s))
    s = 0.0
    for k in range(1, terms + 1):
        s += (-1) ** (k - 1) * math.exp(-2 * k * k * lam * lam)
    return min(1.0, max(0.0, 2.0 * s))


def ks_normal_test(values) -> tuple[float, float]:
    """Kolmogorov-Smirnov distance to a normal fitted on the same sample.

    The p-value is the asymptotic Kolmogorov tail at ``sqrt(n) * D``; no
    Lilliefors correction is applied, so it is conservative.
    """
    x, mu, sd = _fit_normal(values, 8)
    x = np.sort(x)
    n = x.size
    F = ndtr((x - mu) / sd)
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - F)), float(np.max(F - (i - 1) / n)))
    return d, kolmogorov_sf(math.sqrt(n) * d)


def anderson_darling_normal(values) -> NormalityReport:
    """Anderson-Darling A^2 for a fitted normal with fixed critical values.

    Only the AD fields are meaningful in the returned report; KS fields are
    NaN. Use :func:`normality` for both.
    """
    x, mu, sd = _fit_normal(values, 8)
    x = np.sort(x)
    n = x.size
    F = np.clip(ndtr((x - mu) / sd), _CDF_EPS, 1.0 - _CDF_EPS)
    i = np.arange(1, n + 1)
    a2 = -n - float(np.sum((2 * i - 1) * (np.log(F) + np.log1p(-F[::-1])))) / n
    return NormalityReport(n, math.nan, math.nan, a2)


def normality(values) -> NormalityReport:
    d, p = ks_normal_test(values)
    rep = anderson_darling_normal(values)
    rep.ks_statistic, rep.ks_pvalue = d, p
    return rep


def skew_kurtosis(values) -> tuple[float, float, float]:
    """Moment skewness, raw kurtosis (normal = 3), and excess kurtosis."""
    x = _as_1d(values)
    if x.size < 3:
        raise ValueError("need at least 3 values")
    c = x - x.mean()
    m2 = float(np.mean(c ** 2))
    if not m2 > 0:
        raise DegenerateDistributionError("zero variance")
    skew = float(np.mean(c ** 3)) / m2 ** 1.5
    kurt = float(np.mean(c ** 4)) / m2 ** 2
    return skew, kurt, kurt - 3.0


def report(frame: pd.DataFrame, column: str = "consumption") -> dict:
    """Summary, normality of ``column``, and the correlation matrix.

    Correlation rows and columns follow the order of ``summary``; undefined
    entries (constant columns) are ``null``.
    """
    corr = pearson_matrix(frame.to_numpy(dtype=np.float64))
    skew, kurt, excess = skew_kurtosis(frame[column])
    return {
        "summary": [asdict(r) for r in summarize(frame)],
        "normality": {"column": column, **normality(frame[column]).to_dict(),
                      "skewness": skew, "kurtosis_raw": kurt,
                      "kurtosis_excess": excess},
        "correlation": [[None if math.isnan(v) else float(v) for v in row]
                        for row in corr],
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False)
