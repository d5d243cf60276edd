# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Operation order mirrors ``_py.py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

BACKEND = "cython"


def build_histograms(const cnp.uint8_t[:, ::1] X_binned, const cnp.intp_t[::1] idx,
                     const double[::1] grad, Py_ssize_t n_bins):
    cdef Py_ssize_t n_features = X_binned.shape[1]
    cdef Py_ssize_t m = idx.shape[0]
    sum_g_arr = np.zeros((n_features, n_bins), dtype=np.float64)
    count_arr = np.zeros((n_features, n_bins), dtype=np.int64)
    cdef double[:, ::1] sum_g = sum_g_arr
    cdef cnp.int64_t[:, ::1] count = count_arr
    cdef Py_ssize_t i, f, r
    cdef double g
    cdef cnp.uint8_t b
    with nogil:
        for f in range(n_features):
            for i in range(m):
                r = idx[i]
                b = X_binned[r, f]
                sum_g[f, b] += grad[r]
                count[f, b] += 1
    return sum_g_arr, count_arr


def best_split(const double[:, ::1] sum_g, const cnp.int64_t[:, ::1] count,
               const cnp.int64_t[::1] feature_bins, double g_total,
               cnp.int64_t n_total, cnp.int64_t min_samples_leaf, double l2):
    cdef double best_gain = 0.0
    cdef Py_ssize_t best_f = -1, best_b = -1
    cdef double parent = g_total * g_total / (n_total + l2)
    cdef Py_ssize_t f, b, nb, fb
    cdef double gl, gr, gain, fgain
    cdef cnp.int64_t nl, nr
    with nogil:
        for f in range(sum_g.shape[0]):
            nb = feature_bins[f]
            if nb < 2:
                continue
            gl = 0.0
            nl = 0
            fgain = -INFINITY
            fb = -1
            for b in range(nb - 1):
                gl = gl + sum_g[f, b]
                nl = nl + count[f, b]
                nr = n_total - nl
                if nl < min_samples_leaf or nr < min_samples_leaf:
                    continue
                gr = g_total - gl
                gain = gl * gl / (nl + l2) + gr * gr / (nr + l2) - parent
                if gain > fgain:
                    fgain = gain
                    fb = b
            if fb >= 0 and fgain > best_gain:
                best_gain = fgain
                best_f = f
                best_b = fb
    return best_gain, best_f, best_b


def predict_forest(const double[:, :] X, const cnp.int64_t[::1] feature,
                   const double[::1] threshold, const cnp.int64_t[::1] left,
                   const cnp.int64_t[::1] right, const double[::1] value,
                   const cnp.int64_t[::1] roots):
    cdef Py_ssize_t n = X.shape[0]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t t, i
    cdef cnp.int64_t node, f
    with nogil:
        for t in range(roots.shape[0]):
            for i in range(n):
                node = roots[t]
                f = feature[node]
                while f >= 0:
                    if X[i, f] <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                    f = feature[node]
                out[i] += value[node]
    return out_arr


cdef void _refresh_row(double[:, ::1] D, Py_ssize_t s, cnp.int64_t[::1] slot_id,
                       cnp.uint8_t[::1] active, double[::1] nn_d,
                       cnp.int64_t[::1] nn_s) noexcept nogil:
    cdef Py_ssize_t n = D.shape[0], y
    cdef double best = INFINITY
    cdef Py_ssize_t best_y = -1
    cdef cnp.int64_t own = slot_id[s]
    for y in range(n):
        if not active[y] or slot_id[y] <= own:
            continue
        if D[s, y] < best or (D[s, y] == best and best_y >= 0
                              and slot_id[y] < slot_id[best_y]):
            best = D[s, y]
            best_y = y
    nn_d[s] = best
    nn_s[s] = best_y


def upgma(dist):
    Dn = np.array(dist, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] D = Dn
    cdef Py_ssize_t n = D.shape[0]
    slot_arr = np.arange(n, dtype=np.int64)
    size_arr = np.ones(n, dtype=np.float64)
    active_arr = np.ones(n, dtype=np.uint8)
    nn_d_arr = np.full(n, np.inf)
    nn_s_arr = np.full(n, -1, dtype=np.int64)
    merges_arr = np.zeros((max(n - 1, 0), 4), dtype=np.float64)
    cdef cnp.int64_t[::1] slot_id = slot_arr
    cdef double[::1] size = size_arr
    cdef cnp.uint8_t[::1] active = active_arr
    cdef double[::1] nn_d = nn_d_arr
    cdef cnp.int64_t[::1] nn_s = nn_s_arr
    cdef double[:, ::1] merges = merges_arr
    scratch_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] scratch = scratch_arr
    cdef Py_ssize_t step, s, t, x, i
    cdef double m, ss, st
    with nogil:
        for i in range(n):
            D[i, i] = INFINITY
        for i in range(n):
            _refresh_row(D, i, slot_id, active, nn_d, nn_s)
        for step in range(n - 1):
            m = INFINITY
            s = -1
            for i in range(n):
                if not active[i]:
                    continue
                if nn_d[i] < m or (nn_d[i] == m and s >= 0 and slot_id[i] < slot_id[s]):
                    m = nn_d[i]
                    s = i
            t = nn_s[s]
            ss = size[s]
            st = size[t]
            merges[step, 0] = slot_id[s]
            merges[step, 1] = slot_id[t]
            merges[step, 2] = m
            merges[step, 3] = ss + st
            active[t] = 0
            for x in range(n):
                if active[x] and x != s:
                    scratch[x] = (ss * D[x, s] + st * D[x, t]) / (ss + st)
                else:
                    scratch[x] = INFINITY
            for x in range(n):
                D[t, x] = INFINITY
                D[x, t] = INFINITY
            for x in range(n):
                D[s, x] = scratch[x]
                D[x, s] = scratch[x]
            size[s] = ss + st
            slot_id[s] = n + step
            nn_d[s] = INFINITY
            nn_s[s] = -1
            nn_d[t] = INFINITY
            nn_s[t] = -1
            for x in range(n):
                if not active[x] or x == s:
                    continue
                if nn_s[x] == s or nn_s[x] == t:
                    _refresh_row(D, x, slot_id, active, nn_d, nn_s)
                elif D[x, s] < nn_d[x]:
                    nn_d[x] = D[x, s]
                    nn_s[x] = s
    return merges_arr
