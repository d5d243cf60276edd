import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist, squareform
from sklearn.metrics import davies_bouldin_score, silhouette_score

from amiwatch import cluster


def brute_upgma(X):
    """O(n^3) reference: recompute every cluster distance from point pairs."""
    D = squareform(pdist(X))
    clusters = {i: [i] for i in range(len(X))}
    nxt = len(X)
    heights = []
    while len(clusters) > 1:
        ids = sorted(clusters)
        best = None
        for ai, a in enumerate(ids):
            for b in ids[ai + 1:]:
                d = D[np.ix_(clusters[a], clusters[b])].mean()
                if best is None or d < best[0]:
                    best = (d, a, b)
        d, a, b = best
        heights.append(d)
        clusters[nxt] = clusters.pop(a) + clusters.pop(b)
        nxt += 1
    return np.array(heights)


def test_three_point_example():
    X = np.array([[0.0], [1.0], [5.0]])
    dg = cluster.upgma(X)
    assert dg.rows() == [(0, 1, 1.0, 2), (2, 3, 4.5, 3)]
    assert cluster.cut(dg, 2.0).labels.tolist() == [0, 0, 1]


def test_identical_points_merge_at_zero():
    dg = cluster.upgma(np.zeros((4, 2)))
    assert (dg.height == 0).all()


@pytest.mark.parametrize("seed", range(15))
def test_upgma_matches_brute_force(seed):
    X = np.random.default_rng(seed).normal(size=(12, 3))
    dg = cluster.upgma(X)
    np.testing.assert_allclose(dg.height, brute_upgma(X), rtol=1e-12)
    assert (np.diff(dg.height) >= -1e-12).all()
    assert dg.count[-1] == 12


def test_cut_extremes():
    dg = cluster.upgma(np.random.default_rng(0).normal(size=(10, 2)))
    assert cluster.cut(dg, math.inf).n_clusters == 1
    assert cluster.cut(dg, -math.inf).n_clusters == 10
    assert cluster.cut(dg, 0.0).labels.tolist() == list(range(10))


def test_auto_cut_separates_blobs():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.1, (20, 2)), rng.normal(10, 0.1, (20, 2))])
    a = cluster.cut(cluster.upgma(X))
    assert a.n_clusters == 2
    assert a.labels.tolist() == [0] * 20 + [1] * 20


def test_dendrogram_exports():
    dg = cluster.upgma(np.arange(5.0))
    fr = dg.to_frame()
    assert list(fr.columns) == ["node", "left", "right", "height", "count"]
    assert fr["node"].tolist() == [5, 6, 7, 8]
    assert '"linkage": "average"' in dg.to_json()


def test_silhouette_examples():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(0, 0.1, (15, 2)), rng.normal(20, 0.1, (15, 2))])
    labels = np.repeat([0, 1], 15)
    assert cluster.silhouette(X, labels) > 0.9
    X = np.zeros((4, 2))
    assert cluster.silhouette(X, [0, 0, 1, 1]) == 0.0
    with pytest.raises(ValueError):
        cluster.silhouette(X, [0, 0, 0, 0])


def test_davies_bouldin_examples():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]])
    assert cluster.davies_bouldin(X, [0, 0, 1, 1]) == 0.0
    rng = np.random.default_rng(3)
    blob = rng.normal(size=(20, 2))
    X = np.vstack([blob, blob])
    db = cluster.davies_bouldin(X, np.repeat([0, 1], 20))
    assert db > 5 or math.isinf(db)


@pytest.mark.parametrize("seed", range(10))
def test_scores_match_sklearn(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 3))
    labels = rng.integers(0, 4, size=40)
    labels[:4] = [0, 1, 2, 3]
    assert cluster.silhouette(X, labels) == pytest.approx(silhouette_score(X, labels), abs=1e-12)
    assert cluster.davies_bouldin(X, labels) == pytest.approx(
        davies_bouldin_score(X, labels), abs=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 100), st.floats(0, 2 * math.pi))
def test_rigid_and_scale_invariance(seed, scale, angle):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(15, 2))
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    Y = scale * X @ R.T + rng.normal(size=2) * 10
    a = cluster.cut(cluster.upgma(X), 1.0)
    b = cluster.cut(cluster.upgma(Y), scale * 1.0)
    np.testing.assert_allclose(cluster.upgma(Y).height, scale * cluster.upgma(X).height,
                               rtol=1e-9, atol=1e-9)
    if a.n_clusters >= 2 and (a.labels == b.labels).all():
        assert cluster.silhouette(X, a) == pytest.approx(cluster.silhouette(Y, b), abs=1e-9)
        assert cluster.davies_bouldin(X, a) == pytest.approx(cluster.davies_bouldin(Y, b),
                                                              rel=1e-9)


def test_anomaly_points_scaled():
    import pandas as pd
    fr = pd.DataFrame({"timestamp": pd.date_range("2020-01-01", periods=4, freq="h"),
                       "consumption": [1.0, 2.0, 3.0, 5.0], "d_m": [2.0, 2.0, 2.0, 2.0]})
    P = cluster.anomaly_points(fr, "d_m")
    np.testing.assert_allclose(P[:, 0], [0, 1 / 3, 2 / 3, 1])
    np.testing.assert_allclose(P[:, 1], [0, 0.25, 0.5, 1])
    assert (P[:, 2] == 0).all()
