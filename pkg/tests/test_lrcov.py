import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from gfts.lrcov import (
    KERNELS,
    CurvePanel,
    autocov,
    kernel_weight,
    lag_support,
    long_run_cov,
    plugin_bandwidth,
    resolve_bandwidth,
)

X_GRID = np.linspace(0, 1, 15)
DIRECTION = np.sin(np.pi * X_GRID) + 0.5 * X_GRID


def iid_panel(rng, n, d=15):
    L = rng.standard_normal((d, d)) / np.sqrt(d)
    return rng.standard_normal((n, d)) @ L


def ma1_panel(rng, n, theta=0.5):
    z = rng.standard_normal(n + 1)
    eps = np.outer(z, DIRECTION)
    return eps[1:] + theta * eps[:-1], eps[1:]


def ar1_panel(rng, n, phi=0.8, d=15):
    L = rng.standard_normal((d, d)) / np.sqrt(d)
    e = rng.standard_normal((n, d))
    s = np.empty_like(e)
    s[0] = e[0]
    for t in range(1, n):
        s[t] = phi * s[t - 1] + e[t]
    return s @ L


def brute_autocov(X, lag):
    n, d = X.shape
    mu = [sum(X[t, i] for t in range(n)) / n for i in range(d)]
    out = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for t in range(n):
                if 0 <= t + lag < n:
                    acc += (X[t, i] - mu[i]) * (X[t + lag, j] - mu[j])
            out[i, j] = acc / n
    return out


def test_autocov_lag0_is_gram(rng):
    X = rng.standard_normal((12, 4))
    Xc = X - X.mean(axis=0)
    assert_allclose(autocov(X, 0), Xc.T @ Xc / 12, rtol=1e-14)


def test_autocov_negative_lag_is_transpose(rng):
    X = rng.standard_normal((30, 5))
    assert_allclose(autocov(X, -2), autocov(X, 2).T, atol=1e-12)
    assert_array_equal(autocov(X, -3), autocov(X, 3).T)


@pytest.mark.parametrize("lag", [-3, -1, 0, 1, 2, 3])
def test_autocov_double_loop_oracle(rng, lag):
    X = rng.standard_normal((4, 2))
    assert_allclose(autocov(X, lag), brute_autocov(X, lag), atol=1e-14)


def test_autocov_lag_out_of_range(rng):
    with pytest.raises(ValueError):
        autocov(rng.standard_normal((5, 2)), 5)


@pytest.mark.parametrize("kernel", list(KERNELS))
def test_kernel_axioms(kernel):
    assert kernel_weight(0.0, kernel) == 1.0
    assert kernel_weight(1.5, kernel) == 0.0
    u = np.linspace(-2, 2, 401)
    w = kernel_weight(u, kernel)
    assert np.all(w <= 1) and np.all(w >= 0)
    assert_array_equal(w, kernel_weight(-u, kernel))


def test_kernel_values():
    assert kernel_weight(0.5, "bartlett") == 0.5
    assert kernel_weight(0.4, "flattop") == 1.0
    assert kernel_weight(0.75, "flattop") == pytest.approx(0.5)
    assert kernel_weight(3.0, "bartlett", m=4.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        kernel_weight(0.1, "parzen")


@given(st.floats(-10, 10), st.floats(0.1, 5))
def test_kernel_support(u, m):
    for kernel in KERNELS:
        w = kernel_weight(u, kernel, m)
        assert 0 <= w <= 1
        if abs(u) > m:
            assert w == 0


def test_plugin_constant_panel_returns_one():
    with pytest.warns(RuntimeWarning):
        assert plugin_bandwidth(np.ones((20, 4))) == 1.0


def test_plugin_deterministic(rng):
    X = ar1_panel(rng, 100)
    assert plugin_bandwidth(X) == plugin_bandwidth(X.copy())


def test_plugin_needs_eight(rng):
    with pytest.raises(ValueError):
        plugin_bandwidth(rng.standard_normal((7, 3)))
    assert resolve_bandwidth(rng.standard_normal((7, 3)), "plugin", "bartlett") == 1.0


def test_resolve_bandwidth_specs(rng):
    X = rng.standard_normal((20, 3))
    assert resolve_bandwidth(X, 3, "bartlett") == 3.0
    assert resolve_bandwidth(X, "fixed:2.5", "bartlett") == 2.5
    with pytest.raises(ValueError):
        resolve_bandwidth(X, "auto", "bartlett")


@pytest.mark.slow
def test_plugin_larger_for_persistent_panels():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        wins += plugin_bandwidth(iid_panel(rng, 200)) <= plugin_bandwidth(ar1_panel(rng, 200))
    assert wins >= 18


def test_plugin_scale_invariant(rng):
    X = ar1_panel(rng, 80)
    assert plugin_bandwidth(X) == pytest.approx(plugin_bandwidth(7.0 * X), rel=1e-12)


def test_bartlett_v1_is_lag0(rng):
    X = rng.standard_normal((40, 6))
    G = autocov(X, 0)
    assert_allclose(long_run_cov(X, 1.0).matrix, (G + G.T) / 2, atol=1e-15)
    assert lag_support(1.0, "bartlett", 40) == [0]


def test_lrc_symmetric_psd(rng):
    X = ar1_panel(rng, 60)
    for kernel in KERNELS:
        C = long_run_cov(X, 6.0, kernel).matrix
        assert np.max(np.abs(C - C.T)) == 0
        assert np.linalg.eigvalsh(C).min() >= -1e-12 * np.trace(C)


def test_lrc_scales_quadratically(rng):
    X = ar1_panel(rng, 60)
    v = plugin_bandwidth(X)
    assert_allclose(long_run_cov(3 * X, plugin_bandwidth(3 * X)).matrix, 9 * long_run_cov(X, v).matrix,
                    rtol=1e-10, atol=1e-14)


def test_lrc_rejects_small_bandwidth(rng):
    with pytest.raises(ValueError):
        long_run_cov(rng.standard_normal((10, 2)), 0.5)


def test_iid_lrc_close_to_lag0():
    rng = np.random.default_rng(3)
    X = iid_panel(rng, 500)
    C = long_run_cov(X, plugin_bandwidth(X)).matrix
    d_iid = np.linalg.norm(C - autocov(X, 0))
    Y, _ = ma1_panel(rng, 500)
    G1 = autocov(Y, 1)
    d_ma = np.linalg.norm(G1 + G1.T)
    assert d_iid < d_ma


@pytest.mark.slow
def test_ma1_leading_eigenvalue():
    theta = 0.5
    for seed in range(5):
        rng = np.random.default_rng(seed)
        f, eps = ma1_panel(rng, 1000, theta)
        lam = long_run_cov(f, plugin_bandwidth(f)).eigenvalues[0]
        lam_eps = np.linalg.eigvalsh(autocov(eps, 0))[-1]
        assert abs(lam / lam_eps / (1 + theta) ** 2 - 1) < 0.15


def test_curve_panel_validation():
    with pytest.raises(ValueError):
        CurvePanel(np.array([[1.0, np.nan]]))
    cp = CurvePanel(np.zeros((3, 6)), members=("a", "b"))
    assert (cp.n, cp.d, cp.omega, cp.p) == (3, 6, 2, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 25), st.integers(1, 4), st.integers(0, 2**31))
def test_autocov_transpose_property(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d))
    for lag in range(n):
        assert_array_equal(autocov(X, -lag), autocov(X, lag).T)
