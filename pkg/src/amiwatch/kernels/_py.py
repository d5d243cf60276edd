"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ext.pyx`` with the same signature and
the same floating-point operation order, so the two backends agree bit for
bit on the same inputs.
"""
import numpy as np

BACKEND = "python"


def build_histograms(X_binned, idx, grad, n_bins):
    """Per-feature gradient sums and sample counts for the rows in ``idx``.

    Returns ``(sum_g, count)`` with shape ``(n_features, n_bins)``.
    """
    n_features = X_binned.shape[1]
    sum_g = np.zeros((n_features, n_bins), dtype=np.float64)
    count = np.zeros((n_features, n_bins), dtype=np.int64)
    g = grad[idx]
    rows = X_binned[idx]
    for f in range(n_features):
        b = rows[:, f]
        sum_g[f] = np.bincount(b, weights=g, minlength=n_bins)[:n_bins]
        count[f] = np.bincount(b, minlength=n_bins)[:n_bins]
    return sum_g, count


def best_split(sum_g, count, feature_bins, g_total, n_total, min_samples_leaf, l2):
    """Scan every (feature, bin) boundary and return ``(gain, feature, bin)``.

    A split at bin ``b`` sends bins ``0..b`` left. ``feature == -1`` means no
    admissible split. Ties keep the lowest feature, then the lowest bin.
    """
    best_gain = 0.0
    best_f = -1
    best_b = -1
    parent = g_total * g_total / (n_total + l2)
    for f in range(sum_g.shape[0]):
        nb = int(feature_bins[f])
        if nb < 2:
            continue
        gl = np.cumsum(sum_g[f, : nb - 1])
        nl = np.cumsum(count[f, : nb - 1])
        gr = g_total - gl
        nr = n_total - nl
        ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = gl * gl / (nl + l2) + gr * gr / (nr + l2) - parent
        gain = np.where(ok, gain, -np.inf)
        b = int(np.argmax(gain))
        if gain[b] > best_gain:
            best_gain = float(gain[b])
            best_f = f
            best_b = b
    return best_gain, best_f, best_b


def predict_forest(X, feature, threshold, left, right, value, roots):
    """Sum of leaf values over all trees for each row of ``X``."""
    n = X.shape[0]
    out = np.zeros(n, dtype=np.float64)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        while True:
            f = feature[node]
            internal = f >= 0
            if not internal.any():
                break
            ni = node[internal]
            go_left = X[rows[internal], f[internal]] <= threshold[ni]
            node[internal] = np.where(go_left, left[ni], right[ni])
        out += value[node]
    return out


def _refresh_row(D, s, slot_id, active, nn_d, nn_s):
    cand = active & (slot_id > slot_id[s])
    vals = np.where(cand, D[s], np.inf)
    m = vals.min()
    if m == np.inf:
        nn_d[s] = np.inf
        nn_s[s] = -1
        return
    ties = np.flatnonzero(vals == m)
    nn_d[s] = m
    nn_s[s] = ties[np.argmin(slot_id[ties])]


def upgma(dist):
    """Average-linkage agglomeration over a square distance matrix.

    Returns an ``(n - 1, 4)`` array of ``(left_id, right_id, height, size)``
    rows. Leaves are ids ``0..n-1``; the k-th merge creates id ``n + k``.
    The merged pair is the lexicographic minimum of ``(height, left_id,
    right_id)`` over all active pairs.
    """
    D = np.array(dist, dtype=np.float64, copy=True)
    n = D.shape[0]
    np.fill_diagonal(D, np.inf)
    slot_id = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.float64)
    active = np.ones(n, dtype=bool)
    nn_d = np.full(n, np.inf)
    nn_s = np.full(n, -1, dtype=np.int64)
    for s in range(n):
        _refresh_row(D, s, slot_id, active, nn_d, nn_s)
    merges = np.zeros((n - 1, 4), dtype=np.float64)
    for step in range(n - 1):
        cand = np.where(active, nn_d, np.inf)
        m = cand.min()
        ties = np.flatnonzero(cand == m)
        s = ties[np.argmin(slot_id[ties])]
        t = nn_s[s]
        a, b = slot_id[s], slot_id[t]
        ss, st = size[s], size[t]
        merges[step] = (a, b, m, ss + st)

        new = (ss * D[:, s] + st * D[:, t]) / (ss + st)
        active[t] = False
        D[t, :] = np.inf
        D[:, t] = np.inf
        new[~active] = np.inf
        new[s] = np.inf
        D[s, :] = new
        D[:, s] = new
        size[s] = ss + st
        slot_id[s] = n + step
        nn_d[s] = np.inf
        nn_s[s] = -1
        nn_d[t] = np.inf
        nn_s[t] = -1

        stale = active & ((nn_s == s) | (nn_s == t))
        stale[s] = False
        closer = active & ~stale & (new < nn_d)
        closer[s] = False
        nn_d[closer] = new[closer]
        nn_s[closer] = s
        for x in np.flatnonzero(stale):
            _refresh_row(D, x, slot_id, active, nn_d, nn_s)
    return merges
