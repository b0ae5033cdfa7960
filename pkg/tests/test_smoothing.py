import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gfts.panel import AgeGrid, MortalityPanel, SeriesData, SeriesId, SyntheticSpec, synthesize_panel
from gfts.smoothing import (
    SmoothingError,
    SmoothingOptions,
    SplineBasis,
    isotonic_increasing,
    smooth_curve,
    smooth_panel,
    variance_weights,
)

GRID = AgeGrid.single_years(100)
AGES = GRID.ages


def gompertz(x):
    return -9.0 + 0.085 * x + 2.5 * np.exp(-x / 30.0)


def test_variance_weight_formula():
    assert variance_weights([0.5], [100.0])[0] == pytest.approx(100.0)
    assert 1.0 / variance_weights([0.5], [100.0])[0] == pytest.approx(0.01)


def test_variance_weight_rare_death_limit():
    w = variance_weights([1e-2, 1e-4, 1e-8, 0.0], [1000.0] * 4)
    assert np.all(np.diff(w) < 0) and w[-1] == 0.0


def test_variance_weights_scalar_oracle(rng):
    m = rng.uniform(1e-5, 0.9, 200)
    e = rng.uniform(1, 1e5, 200)
    m[::17] = np.nan
    e[::23] = 0.0
    ref = [0.0 if not (np.isfinite(mi) and ei > 0) else mi * ei / (1 - mi) for mi, ei in zip(m, e)]
    assert_allclose(variance_weights(m, e), ref, rtol=1e-15)


def test_variance_weight_clamps_rate_one():
    with pytest.warns(RuntimeWarning, match="clamped"):
        w = variance_weights([1.0, 0.5], [10.0, 10.0])
    assert np.isfinite(w).all() and w[0] > 1e9


def test_smooth_input_reproduced():
    y = gompertz(AGES)
    fit = smooth_curve(y, np.ones_like(y), GRID)
    assert np.max(np.abs(fit.values - y)) < 1e-6


def test_masked_cell_on_line_filled():
    y = -8.0 + 0.05 * AGES
    y[40] = np.nan
    w = np.where(np.isfinite(y), 1.0, 0.0)
    fit = smooth_curve(y, w, GRID)
    assert abs(fit.values[40] - (-8.0 + 0.05 * 40)) < 1e-4
    assert np.all(np.isfinite(fit.values))


def pava_oracle(y, w):
    # brute force: minimise over all block partitions is too costly, use the
    # min-max formula  f_i = max_{j<=i} min_{k>=i} avg_w(y[j..k])
    n = len(y)
    out = np.empty(n)
    for i in range(n):
        best = -np.inf
        for j in range(i + 1):
            inner = min(np.average(y[j:k + 1], weights=w[j:k + 1]) for k in range(i, n))
            best = max(best, inner)
        out[i] = best
    return out


def test_old_age_dip_is_made_monotone():
    y = gompertz(AGES)
    y[AGES >= 85] -= 0.15 * (AGES[AGES >= 85] - 85)
    w = np.ones_like(y)
    free = smooth_curve(y, w, GRID, SmoothingOptions(monotone_from_age=None))
    tail = AGES >= 65
    assert np.any(np.diff(free.values[tail]) < 0)
    fit = smooth_curve(y, w, GRID)
    assert np.all(np.diff(fit.values[tail]) >= -1e-12)
    assert_allclose(fit.values[tail], pava_oracle(free.values[tail], w[tail]), atol=1e-10)
    assert_allclose(fit.values[~tail], free.values[~tail])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.data())
def test_isotonic_matches_minmax_formula(ys, data):
    y = np.array(ys)
    w = np.array(data.draw(st.lists(st.floats(0.1, 10), min_size=len(ys), max_size=len(ys))))
    out = isotonic_increasing(y, w)
    assert np.all(np.diff(out) >= -1e-12)
    assert_allclose(out, pava_oracle(y, w), atol=1e-9)


def test_all_missing_is_error():
    y = np.full(AGES.size, np.nan)
    with pytest.raises(SmoothingError):
        smooth_curve(y, np.zeros_like(y), GRID)


def test_too_few_points():
    y = np.full(AGES.size, np.nan)
    y[:3] = 1.0
    with pytest.raises(SmoothingError, match="need 4"):
        smooth_curve(y, np.where(np.isfinite(y), 1.0, 0.0), GRID)


@pytest.mark.parametrize("lam", [1e-6, 1.0, 1e4])
def test_linear_null_space_any_lambda(lam, rng):
    y = 0.3 - 0.02 * AGES
    w = rng.uniform(0.1, 5, AGES.size)
    opts = SmoothingOptions(lambda_grid=(lam,), monotone_from_age=None)
    assert_allclose(smooth_curve(y, w, GRID, opts).values, y, atol=1e-9)


def test_gcv_lambda_invariant_to_weight_scale(rng):
    y = gompertz(AGES) + 0.05 * rng.standard_normal(AGES.size)
    w = rng.uniform(0.5, 2, AGES.size)
    a = smooth_curve(y, w, GRID)
    b = smooth_curve(y, 37.5 * w, GRID)
    assert a.lam == b.lam
    assert_allclose(a.gcv, b.gcv, rtol=1e-8)


def test_rss_non_increasing_as_lambda_decreases(rng):
    y = gompertz(AGES) + 0.1 * rng.standard_normal(AGES.size)
    w = rng.uniform(0.5, 2, AGES.size)
    basis = SplineBasis(GRID)
    rss = []
    for lam in np.logspace(4, -8, 25):
        opts = SmoothingOptions(lambda_grid=(lam,), monotone_from_age=None)
        f = smooth_curve(y, w, GRID, opts, basis).values
        rss.append(np.sum(w * (y - f) ** 2))
    assert np.all(np.diff(rss) <= 1e-10 * rss[0])


def test_noise_free_synthetic_panel_reproduced():
    spec = SyntheticSpec(layout=(1,), n=4, ages=101, K_true=2, dynamics="white")
    panel, truth = synthesize_panel(spec, 5)
    curves = smooth_panel(panel)
    for sid in truth.bottom:
        assert np.max(np.abs(curves[sid] - truth.log_rate[sid])) < 1e-6


@pytest.mark.slow
def test_smoothing_reduces_old_age_variance():
    spec = SyntheticSpec(layout=(1,), n=2, ages=101, K_true=1, dynamics="white", score_sd=0.0,
                         noise_level=1e-9, exposure_scale=2e3)
    raw, smooth = [], []
    for seed in range(50):
        panel, truth = synthesize_panel(spec, seed)
        sid = truth.bottom[0]
        data = panel[sid]
        raw.append(np.log(np.maximum(data.rate[0], 1e-7)))
        smooth.append(smooth_panel(MortalityPanel(panel.grid, panel.years, {sid: data}))[sid][0])
    old = AGES >= 90
    assert np.all(np.var(smooth, axis=0)[old] < np.var(raw, axis=0)[old])


def test_single_year_panel_is_within_year(small_panel):
    panel, truth = small_panel
    sid = truth.bottom[0]
    one = MortalityPanel(panel.grid, panel.years[3:4], {sid: SeriesData(*(a[3:4] for a in (
        panel[sid].rate, panel[sid].exposure, panel[sid].deaths)))})
    full = smooth_panel(MortalityPanel(panel.grid, panel.years, {sid: panel[sid]}))[sid]
    assert_allclose(smooth_panel(one)[sid][0], full[3], rtol=0, atol=1e-13)


def test_smooth_panel_error_names_series_and_year():
    grid = AgeGrid(np.arange(6, dtype=float))
    rate = np.full((2, 6), 0.01)
    rate[1] = np.nan
    panel = MortalityPanel(grid, np.array([2000, 2001]), {SeriesId("A", "F"): SeriesData(rate, np.ones((2, 6)), rate)})
    with pytest.raises(SmoothingError, match=r"A\*F, year 2001"):
        smooth_panel(panel)


def test_options_validation():
    for kw in ({"knot_spacing": 0}, {"penalty_order": 4}, {"lambda_grid": ()}):
        with pytest.raises(ValueError):
            SmoothingOptions(**kw)
