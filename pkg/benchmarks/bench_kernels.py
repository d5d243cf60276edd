"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--rows 50000] [--points 400] [--repeat 5]

Each kernel is run ``--repeat`` times per backend; the best wall time is
reported together with the speed-up and a check that both backends return
identical results.
"""
import argparse
import sys
import time

import numpy as np
from scipy.spatial.distance import pdist, squareform

from amiwatch import gbdt
from amiwatch.kernels import available_backends


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def cases(rows, points, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(rows, 8))
    y = np.sin(X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.normal(size=rows)
    model = gbdt.fit(X, gbdt.GbdtConfig(n_trees=50), features=tuple(f"x{i}" for i in range(8)),
                     y=y)
    Xb = gbdt.bin_matrix(X, model.bin_edges)
    n_bins = int(max(e.size + 1 for e in model.bin_edges))
    feature_bins = np.array([e.size + 1 for e in model.bin_edges], dtype=np.int64)
    idx = np.arange(rows, dtype=np.intp)
    grad = np.ascontiguousarray(y - y.mean())
    flat = gbdt._flat_forest(model)
    D = squareform(pdist(rng.normal(size=(points, 3))))
    return {
        "histograms": lambda k: k.build_histograms(Xb, idx, grad, n_bins),
        "best_split": lambda k: k.best_split(*k.build_histograms(Xb, idx, grad, n_bins),
                                             feature_bins, float(grad.sum()), rows, 20, 0.0),
        "predict_forest": lambda k: k.predict_forest(X, *flat),
        "upgma": lambda k: k.upgma(D),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--rows", type=int, default=50000)
    ap.add_argument("--points", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is timed", file=sys.stderr)
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speed-up':>10}  match")
    ok = True
    for name, fn in cases(args.rows, args.points).items():
        times, outs = {}, {}
        for b, mod in backends.items():
            times[b], outs[b] = best_time(lambda: fn(mod), args.repeat)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        match = same(outs["python"], outs["cython"]) if "cython" in outs else True
        ok &= match
        print(f"{name:<16}" + "".join(f"{1e3 * times[b]:>10.2f}ms" for b in backends)
              + f"{speed:>9.1f}x  {'yes' if match else 'NO'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
