"""UPGMA clustering of detected anomalies and cluster-quality scores."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist, pdist, squareform

from . import kernels

CLUSTER_FEATURES = ("t", "consumption", "score")


@dataclass
class Dendrogram:
    """Merge list. Leaves are ``0..n-1``; merge k creates node ``n + k``."""

    left: np.ndarray
    right: np.ndarray
    height: np.ndarray
    count: np.ndarray

    @property
    def n_points(self):
        return len(self.height) + 1

    def rows(self):
        return [(int(a), int(b), float(h), int(c))
                for a, b, h, c in zip(self.left, self.right, self.height, self.count)]

    def to_json(self):
        return json.dumps({"n_points": self.n_points, "linkage": "average",
                           "merges": [{"left": a, "right": b, "height": h, "count": c}
                                      for a, b, h, c in self.rows()]}, indent=1)

    def to_frame(self):
        n = self.n_points
        return pd.DataFrame({"node": np.arange(n, 2 * n - 1), "left": self.left,
                             "right": self.right, "height": self.height, "count": self.count})


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    height: float

    @property
    def n_clusters(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0


def _points(points):
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if not np.isfinite(X).all():
        raise ValueError("points contain non-finite coordinates")
    return X


def upgma(points, metric: str = "euclidean") -> Dendrogram:
    """Average-linkage agglomeration.

    Each step merges the closest pair of clusters, where the distance between
    two clusters is the mean of all cross-pair point distances. Equal
    distances resolve to the lexicographically smallest ``(left, right)``
    node-id pair.
    """
    X = _points(points)
    if X.shape[0] < 2:
        raise ValueError("need at least two points")
    merges = kernels.upgma(squareform(pdist(X, metric=metric)))
    return Dendrogram(merges[:, 0].astype(np.int64), merges[:, 1].astype(np.int64),
                      merges[:, 2].copy(), merges[:, 3].astype(np.int64))


def largest_gap_height(dendrogram: Dendrogram) -> float:
    """Mid-point of the widest gap between consecutive merge heights."""
    h = np.concatenate([[0.0], np.sort(dendrogram.height)])
    if h.size < 2:
        return math.inf
    gaps = np.diff(h)
    i = int(np.argmax(gaps))
    return float((h[i] + h[i + 1]) / 2.0)


def cut(dendrogram: Dendrogram, height: float | None = None) -> ClusterAssignment:
    """Connected components of merges strictly below ``height``.

    ``height=None`` cuts inside the largest gap between merge heights.
    Labels are numbered by each cluster's lowest point index.
    """
    if height is None:
        height = largest_gap_height(dendrogram)
    n = dendrogram.n_points
    parent = np.arange(2 * n - 1)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for k, (a, b, h, _) in enumerate(dendrogram.rows()):
        if h < height:
            parent[find(a)] = n + k
            parent[find(b)] = n + k
    roots = np.array([find(i) for i in range(n)])
    _, first = np.unique(roots, return_index=True)
    order = {roots[i]: lab for lab, i in enumerate(sorted(first))}
    return ClusterAssignment(np.array([order[r] for r in roots], dtype=np.int64), float(height))


def _labels(assignment):
    return np.asarray(getattr(assignment, "labels", assignment), dtype=np.int64)


def silhouette(points, assignment) -> float:
    """Mean silhouette; singletons score 0, as does ``max(a, b) == 0``."""
    X = _points(points)
    labels = _labels(assignment)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ValueError("silhouette is undefined for a single cluster")
    D = squareform(pdist(X))
    n = X.shape[0]
    s = np.zeros(n)
    masks = [labels == c for c in uniq]
    sizes = np.array([m.sum() for m in masks])
    for i in range(n):
        own = int(np.searchsorted(uniq, labels[i]))
        if sizes[own] == 1:
            continue
        means = np.array([D[i, m].sum() for m in masks])
        a = means[own] / (sizes[own] - 1)
        others = np.delete(means / sizes, own)
        b = float(others.min())
        denom = max(a, b)
        s[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(s.mean())


def davies_bouldin(points, assignment) -> float:
    """Mean over clusters of the worst ``(S_i + S_j) / M_ij`` ratio.

    ``S`` is the mean distance to the centroid and ``M`` the centroid
    distance. Coincident centroids give ``inf`` for that pair unless both
    scatters are zero, which counts as 0.
    """
    X = _points(points)
    labels = _labels(assignment)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ValueError("Davies-Bouldin is undefined for a single cluster")
    cents = np.array([X[labels == c].mean(axis=0) for c in uniq])
    scatter = np.array([np.linalg.norm(X[labels == c] - cents[k], axis=1).mean()
                        for k, c in enumerate(uniq)])
    M = cdist(cents, cents)
    K = uniq.size
    worst = np.zeros(K)
    for i in range(K):
        best = 0.0
        for j in range(K):
            if i == j:
                continue
            num = scatter[i] + scatter[j]
            if M[i, j] > 0:
                r = num / M[i, j]
            else:
                r = 0.0 if num == 0 else math.inf
            best = max(best, r)
        worst[i] = best
    return float(worst.mean())


def anomaly_points(frame: pd.DataFrame, score_column: str) -> np.ndarray:
    """(time, consumption, score) per anomaly, each MinMax-scaled to [0, 1]."""
    ts = pd.DatetimeIndex(frame["timestamp"] if "timestamp" in frame else frame.index)
    cols = [ts.asi8.astype(np.float64), frame["consumption"].to_numpy(float),
            frame[score_column].to_numpy(float)]
    out = []
    for c in cols:
        span = c.max() - c.min()
        out.append((c - c.min()) / span if span > 0 else np.zeros_like(c))
    return np.column_stack(out)
