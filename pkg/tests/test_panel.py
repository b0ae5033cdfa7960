import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from gfts.panel import (
    JAPAN_LAYOUT,
    AgeGrid,
    MortalityPanel,
    ParseError,
    SeriesData,
    SeriesId,
    StructuralError,
    SyntheticSpec,
    layout_areas,
    load_panel,
    save_panel,
    synthesize_panel,
    to_log,
)

HEADER = "series,sex,year,age,rate,exposure,deaths\n"


def write(tmp_path, body, name="p.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body)
    return path


def test_single_series_minimal(tmp_path):
    rows = "".join(f"A,F,{y},{a},0.01,100,1\n" for y in (2000, 2001, 2002) for a in (0, 1))
    panel = load_panel(write(tmp_path, rows))
    assert (panel.n, panel.p) == (3, 2)
    s = panel.summary()
    assert s.series_count == 1 and s.missing_cells == 0 and s.year_span == (2000, 2002)


def test_zero_exposure_is_masked(tmp_path):
    rows = "".join(f"A,F,{y},{a},0.01,100,1\n" for y in (2000, 2001, 2002) for a in (0, 1))
    rows = rows.replace("2001,1,0.01,100,1", "2001,1,0,0,0")
    panel = load_panel(write(tmp_path, rows))
    data = panel[SeriesId("A", "F")]
    assert np.isnan(data.rate[1, 1])
    assert panel.summary().missing_cells == 1
    assert panel.n == 3  # not dropped


def test_open_age_group(tmp_path):
    rows = "".join(f"A,T,2000,{a},0.1,10,1\n" for a in ("98", "99", "100+"))
    panel = load_panel(write(tmp_path, rows))
    assert panel.grid.open_last
    assert_array_equal(panel.grid.ages, [98, 99, 100])
    assert panel.grid.labels()[-1] == "100+"


def test_parse_error_reports_row(tmp_path):
    rows = "A,F,2000,0,0.01,100,1\nA,F,2000,1,abc,100,1\n"
    with pytest.raises(ParseError, match="line 3"):
        load_panel(write(tmp_path, rows))


def test_duplicate_cell(tmp_path):
    rows = "A,F,2000,0,0.01,100,1\nA,F,2000,0,0.01,100,1\n"
    with pytest.raises(StructuralError, match="duplicate"):
        load_panel(write(tmp_path, rows))


def test_inconsistent_age_grids(tmp_path):
    rows = "A,F,2000,0,0.01,100,1\nA,F,2000,1,0.01,100,1\nB,F,2000,0,0.01,100,1\nB,F,2000,2,0.01,100,1\n"
    with pytest.raises(StructuralError, match="age grid"):
        load_panel(write(tmp_path, rows))


def test_rate_deaths_disagree(tmp_path):
    with pytest.raises(StructuralError):
        load_panel(write(tmp_path, "A,F,2000,0,0.5,100,1\nA,F,2000,1,0.01,100,1\n"))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_panel(tmp_path / "nope.csv")


def test_bad_header(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(ParseError, match="line 1"):
        load_panel(path)


def test_japan_layout_has_168_series(tmp_path):
    spec = SyntheticSpec(layout=JAPAN_LAYOUT, n=3, ages=4, K_true=1)
    panel, _ = synthesize_panel(spec, 0)
    save_panel(panel, tmp_path / "jp.csv")
    loaded = load_panel(tmp_path / "jp.csv")
    assert len(loaded.series) == 168
    regions, parent = layout_areas(JAPAN_LAYOUT)
    assert len(regions) == 8 and len(parent) == 47


def test_hmd_reader(tmp_path):
    head = "Japan, Death rates (period 1x1)\n\n  Year      Age       Female    Male      Total\n"
    rates = head + "".join(
        f"  {y}       {a}    0.010000  0.020000  0.015000\n" for y in (2000, 2001) for a in ("0", "1", "2", "3+")
    )
    expo = head + "".join(
        f"  {y}       {a}    100.00  100.00  200.00\n" for y in (2000, 2001) for a in ("0", "1", "2", "3+")
    )
    (tmp_path / "Mx_1x1.txt").write_text(rates)
    (tmp_path / "Exposures_1x1.txt").write_text(expo)
    panel = load_panel(tmp_path / "Mx_1x1.txt", schema="hmd", top_age=2)
    assert panel.p == 3 and panel.grid.open_last
    tot = panel[SeriesId("Japan", "T")]
    assert_allclose(tot.rate[0], [0.015, 0.015, 0.015])
    assert_allclose(tot.exposure[0], [200, 200, 400])


def test_to_log_scalars():
    grid = AgeGrid(np.array([0.0, 1.0]))
    rate = np.array([[math.e, 0.0]])
    panel = MortalityPanel(grid, np.array([2000]), {SeriesId("A", "T"): SeriesData(rate, [[1, 1]], rate)})
    out = to_log(panel, floor=1e-7)[SeriesId("A", "T")]
    assert out.values[0, 0] == pytest.approx(1.0)
    assert out.values[0, 1] == pytest.approx(math.log(1e-7))


def test_to_log_elementwise_oracle(small_panel):
    panel, _ = small_panel
    logs = to_log(panel)
    for sid, data in panel.series.items():
        ref = np.empty(data.rate.shape)
        for t in range(data.rate.shape[0]):
            for i in range(data.rate.shape[1]):
                ref[t, i] = math.log(max(data.rate[t, i], 1e-7))
        assert_allclose(logs[sid].values, ref, rtol=0, atol=1e-14)


def test_to_log_rejects_bad_floor(small_panel):
    with pytest.raises(ValueError):
        to_log(small_panel[0], floor=0.0)


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=20), st.floats(1e-9, 1e-2))
def test_to_log_monotone_and_floor(rates, floor):
    r = np.sort(np.array(rates))
    grid = AgeGrid(np.arange(r.size, dtype=float))
    panel = MortalityPanel(grid, np.array([1]), {SeriesId("A", "T"): SeriesData(r[None], np.ones((1, r.size)), r[None])})
    y = to_log(panel, floor)[SeriesId("A", "T")].values[0]
    assert np.all(np.diff(y) >= 0)
    assert np.all(y[r <= floor] == math.log(floor))


def test_synthesize_deterministic():
    spec = SyntheticSpec(n=8, ages=6, noise_level=0.05)
    a, _ = synthesize_panel(spec, 4)
    b, _ = synthesize_panel(spec, 4)
    for sid in a.series:
        assert_array_equal(a[sid].rate, b[sid].rate)
        assert_array_equal(a[sid].deaths, b[sid].deaths)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=3), st.integers(0, 2**31), st.booleans())
def test_synthetic_aggregation_coherent(layout, seed, noisy):
    spec = SyntheticSpec(layout=tuple(layout), n=4, ages=5, K_true=1, noise_level=0.1 if noisy else 0.0)
    panel, truth = synthesize_panel(spec, seed)
    regions, parent = layout_areas(layout)
    for sid, data in panel.series.items():
        if sid in truth.bottom:
            continue
        kids = [b for b in truth.bottom
                if (sid.sex == "T" or b.sex == sid.sex)
                and sid.area in (b.area, parent[b.area], spec.top)]
        total = sum(panel[c].rate * panel[c].exposure for c in kids)
        assert_allclose(data.rate * data.exposure, total, rtol=1e-9)


def test_noise_free_rank_recovery():
    from gfts.fpca import fit_block, reconstruct
    from gfts.lrcov import CurvePanel

    spec = SyntheticSpec(n=25, ages=30, K_true=2, dynamics="white")
    panel, truth = synthesize_panel(spec, 1)
    sid = truth.bottom[0]
    y = np.log(panel[sid].rate)
    model = fit_block(CurvePanel(y), threshold=1.0)
    assert model.K == 2
    assert np.max(np.abs(reconstruct(model, model.scores) - y)) < 1e-8


def test_save_load_roundtrip(tmp_path, small_panel):
    panel, _ = small_panel
    save_panel(panel, tmp_path / "rt.csv")
    back = load_panel(tmp_path / "rt.csv")
    assert back.grid == panel.grid
    assert_array_equal(back.years, panel.years)
    for sid in panel.series:
        assert_array_equal(back[sid].rate, panel[sid].rate)
        assert_array_equal(back[sid].exposure, panel[sid].exposure)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 2**31))
def test_roundtrip_property(n, p, seed):
    import tempfile
    from pathlib import Path

    rng = np.random.default_rng(seed)
    rate = rng.uniform(1e-5, 0.5, (n, p))
    expo = rng.uniform(1, 1e5, (n, p))
    rate[rng.random((n, p)) < 0.2] = np.nan
    deaths = np.where(np.isfinite(rate), rate * expo, np.nan)
    panel = MortalityPanel(AgeGrid(np.arange(p, dtype=float)), 1990 + np.arange(n),
                           {SeriesId("X", "M"): SeriesData(rate, expo, deaths)})
    with tempfile.TemporaryDirectory() as d:
        save_panel(panel, Path(d) / "x.csv")
        back = load_panel(Path(d) / "x.csv")
    assert_array_equal(back[SeriesId("X", "M")].rate, rate)
    assert_array_equal(back[SeriesId("X", "M")].exposure, expo)
