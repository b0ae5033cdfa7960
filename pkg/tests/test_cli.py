import re

import numpy as np
import pytest

from gfts.cli import main
from gfts.panel import SeriesId, load_panel
from gfts.reconcile import build_summing_matrix, coherence_residual, read_structure

FAST = ["--quick", "-B", "100"]


@pytest.fixture(scope="module")
def syn(tmp_path_factory):
    out = tmp_path_factory.mktemp("syn")
    rc = main(["synthesize", "-o", str(out), "--layout", "1,2", "--years", "14", "--ages", "21", "--seed", "3"])
    assert rc == 0
    return out


def read_forecast(path):
    rows = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    out = {}
    for sid in dict.fromkeys(rows["series"]):
        r = rows[rows["series"] == sid]
        H, p = r["horizon"].max(), r.size // r["horizon"].max()
        out[sid] = r["point"].reshape(H, p)
    return out


def test_synthesize_outputs(syn):
    names = {p.name for p in syn.iterdir()}
    assert {"panel.csv", "config.ini", "hierarchy1.csv", "hierarchy2.csv", "geo-only.csv"} <= names
    panel = load_panel(syn / "panel.csv")
    assert (len(panel.series), panel.n, panel.p) == (18, 14, 21)


def test_smooth_rows_and_plots(syn, tmp_path, capsys):
    assert main(["smooth", str(syn / "panel.csv"), "-o", str(tmp_path), "--plot"]) == 0
    assert "wrote 5292 rows" in capsys.readouterr().out
    sm = load_panel(tmp_path / "smoothed.csv")
    assert (len(sm.series), sm.n, sm.p) == (18, 14, 21)
    svgs = sorted((tmp_path / "plots").glob("*.svg"))
    assert len(svgs) == 18
    assert svgs[0].read_text().count("<polyline") == 14


def test_smooth_missing_input(tmp_path, capsys):
    rc = main(["smooth", str(tmp_path / "nope.csv"), "-o", str(tmp_path)])
    assert rc == 2
    assert "nope.csv" in capsys.readouterr().err


def test_missing_output_is_usage_error(syn):
    assert main(["smooth", str(syn / "panel.csv")]) == 2


def test_forecast_bu_coherent(syn, tmp_path, capsys):
    rc = main(["forecast", str(syn / "panel.csv"), "-o", str(tmp_path), "--structure", str(syn / "hierarchy1.csv"),
               "--method", "dmfts", "--reconcile", "bu", "-H", "5", *FAST])
    assert rc == 0
    assert float(re.search(r"coherence residual (\S+)", capsys.readouterr().out).group(1)) < 1e-9
    # independent check from the written file
    panel = load_panel(syn / "panel.csv")
    s = read_structure(syn / "hierarchy1.csv")
    f = read_forecast(tmp_path / "forecast.csv")
    fc = {SeriesId.parse(k): v for k, v in f.items()}
    assert all(v.shape == (5, 21) for v in fc.values())
    S = build_summing_matrix(s, panel, int(panel.years[-1]))
    assert coherence_residual(fc, s, S) < 1e-9


def test_forecast_single_series(syn, tmp_path):
    src = (syn / "panel.csv").read_text().splitlines()
    one = [src[0]] + [line for line in src[1:] if line.startswith("Japan,T,")]
    (tmp_path / "one.csv").write_text("\n".join(one) + "\n")
    rc = main(["forecast", str(tmp_path / "one.csv"), "-o", str(tmp_path / "out"),
               "--method", "dfts", "--reconcile", "base", "-H", "3", *FAST])
    assert rc == 0
    f = read_forecast(tmp_path / "out" / "forecast.csv")
    assert list(f) == ["Japan*T"] and f["Japan*T"].shape == (3, 21)


def test_forecast_needs_structure(syn, tmp_path):
    rc = main(["forecast", str(syn / "panel.csv"), "-o", str(tmp_path), "--method", "dmfts", *FAST])
    assert rc == 2


def test_forecast_reproducible(syn, tmp_path):
    args = ["forecast", str(syn / "panel.csv"), "--structure", str(syn / "hierarchy2.csv"),
            "--method", "dmfts", "--reconcile", "mint", "-H", "3", "--seed", "9", *FAST]
    assert main(args + ["-o", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main(args + ["-o", str(tmp_path / "b"), "--workers", "3"]) == 0
    a = (tmp_path / "a" / "forecast.csv").read_bytes()
    assert a == (tmp_path / "b" / "forecast.csv").read_bytes()
    # replaying the echoed configuration reproduces the run
    assert main(["forecast", "--config", str(tmp_path / "a" / "config.ini"), "-o", str(tmp_path / "c")]) == 0
    assert a == (tmp_path / "c" / "forecast.csv").read_bytes()


def test_seed_from_environment(syn, tmp_path, monkeypatch):
    args = ["forecast", str(syn / "panel.csv"), "--structure", str(syn / "hierarchy1.csv"),
            "--reconcile", "ols", "-H", "2", *FAST]
    monkeypatch.setenv("GFTS_SEED", "9")
    assert main(args + ["-o", str(tmp_path / "env")]) == 0
    assert "seed = 9" in (tmp_path / "env" / "config.ini").read_text()
    monkeypatch.delenv("GFTS_SEED")
    assert main(args + ["-o", str(tmp_path / "flag"), "--seed", "9"]) == 0
    assert (tmp_path / "env" / "forecast.csv").read_bytes() == (tmp_path / "flag" / "forecast.csv").read_bytes()


def test_backtest(syn, tmp_path, capsys):
    rc = main(["backtest", str(syn / "panel.csv"), "-o", str(tmp_path), "--structure", "hierarchy1,hierarchy2",
               "--layout", "1,2", "-H", "2", "--methods", "dmfts,base,bu", *FAST])
    assert rc == 0
    out = capsys.readouterr().out
    assert "h1=2, h2=1" in out
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "level,series,method,hierarchy,h,rmsfe,mean_interval_score"
    methods = {line.split(",")[2] for line in lines[1:]}
    assert methods == {"dmfts:base", "dmfts:bu"}
    assert len(lines) - 1 == 2 * 2 * 18 * 2
    assert (tmp_path / "summary.txt").read_text() == out


def test_unknown_config_key(syn, tmp_path, capsys):
    (tmp_path / "bad.ini").write_text("[forecast]\nhorizon_years = 3\n")
    rc = main(["forecast", str(syn / "panel.csv"), "-o", str(tmp_path), "--config", str(tmp_path / "bad.ini")])
    assert rc == 2
    assert "horizon_years" in capsys.readouterr().err


def test_structure_validate(syn, tmp_path, capsys):
    assert main(["structure", "validate", str(syn / "hierarchy1.csv"), "--panel", str(syn / "panel.csv")]) == 0
    assert "valid, 18 nodes, 6 bottom series" in capsys.readouterr().out
    bad = (syn / "hierarchy1.csv").read_text().splitlines()
    (tmp_path / "bad.csv").write_text("\n".join(bad[:-1]) + "\n")  # drop a bottom node
    assert main(["structure", "validate", str(tmp_path / "bad.csv")]) == 1
    assert "invalid structure" in capsys.readouterr().err
    assert main(["structure", "validate", str(tmp_path / "none.csv")]) == 2
