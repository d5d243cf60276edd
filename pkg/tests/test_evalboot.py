import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amiwatch import evalboot


def test_mae_examples():
    assert evalboot.mae([1, 2, 3], [1, 2, 3]) == 0.0
    assert evalboot.mae([0, 0], [1, -3]) == 2.0
    assert evalboot.rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
    with pytest.raises(ValueError):
        evalboot.mae([1, 2], [1])


def test_mae_loop_oracle():
    rng = np.random.default_rng(0)
    y, p = rng.normal(size=500), rng.normal(size=500)
    total = 0.0
    for a, b in zip(y, p):
        total += abs(a - b)
    assert evalboot.mae(y, p) == pytest.approx(total / 500, rel=1e-12)


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e3, 1e3)),
       st.floats(-1e3, 1e3))
def test_mae_translation_invariant(y, c):
    p = y[::-1].copy()
    assert evalboot.mae(y + c, p + c) == pytest.approx(evalboot.mae(y, p), abs=1e-9)


def test_zero_residuals_give_zero_interval():
    y = np.arange(50.0)
    r = evalboot.bootstrap_ci(y, y, B=200)
    assert (r.estimate, r.ci_low, r.ci_high) == (0.0, 0.0, 0.0)


def test_interval_contains_estimate_and_shrinks():
    rng = np.random.default_rng(1)
    widths = []
    for n in (100, 1000, 10000):
        y = rng.normal(size=n)
        r = evalboot.bootstrap_ci(y, np.zeros(n), B=300, seed=2)
        assert r.ci_low <= r.estimate <= r.ci_high
        widths.append(r.ci_high - r.ci_low)
    assert widths[0] > widths[1] > widths[2]


def test_determinism_and_seed_sensitivity():
    rng = np.random.default_rng(3)
    y, p = rng.normal(size=200), rng.normal(size=200)
    a = evalboot.bootstrap_ci(y, p, B=100, seed=7)
    assert a == evalboot.bootstrap_ci(y, p, B=100, seed=7)
    assert a != evalboot.bootstrap_ci(y, p, B=100, seed=8)
    assert a.dumps() == evalboot.bootstrap_ci(y, p, "mae", B=100, seed=7).dumps()


def test_monte_carlo_contains_full_sample_metric():
    rng = np.random.default_rng(4)
    hits = 0
    trials = 200
    for t in range(trials):
        y = rng.normal(size=300)  # symmetric residuals against a zero forecast
        r = evalboot.bootstrap_ci(y, np.zeros(300), B=200, seed=t)
        assert r.ci_low <= r.ci_high
        hits += r.ci_low <= r.estimate <= r.ci_high
    assert hits / trials >= 0.95


def test_validation():
    y = np.zeros(20)
    with pytest.raises(ValueError):
        evalboot.bootstrap_ci(y, y, B=1)
    with pytest.raises(ValueError):
        evalboot.bootstrap_ci(y[:5], y[:5])
    with pytest.raises(ValueError):
        evalboot.bootstrap_ci(y, y, level=1.0)
    with pytest.raises(KeyError):
        evalboot.bootstrap_ci(y, y, metric="mape")
