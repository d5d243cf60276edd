"""The one percentile rule used everywhere in the package.

Linear interpolation between closest ranks: for sorted values ``v`` of
length ``n`` the ``q``-quantile sits at virtual index ``h = (n - 1) * q`` and
equals ``v[floor(h)] + (h - floor(h)) * (v[floor(h) + 1] - v[floor(h)])``.
This is numpy's default ``"linear"`` method.
"""
import math

import numpy as np


def quantile_sorted(sorted_values, q):
    """Quantile of an already sorted sequence (list or 1-D array)."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("quantile of an empty series")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    h = (n - 1) * q
    lo = int(math.floor(h))
    if lo >= n - 1:
        return float(sorted_values[n - 1])
    frac = h - lo
    a = float(sorted_values[lo])
    b = float(sorted_values[lo + 1])
    return a + frac * (b - a)


def quantile(values, q):
    arr = np.asarray(values, dtype=np.float64).ravel()
    return quantile_sorted(np.sort(arr), q)
