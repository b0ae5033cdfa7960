"""Command-line front end.

Commands
--------
``synthesize``          write a synthetic panel and its structure files
``smooth``              smoothed log-rate curves, optional rainbow SVG plots
``forecast``            base or reconciled forecasts with prediction intervals
``backtest``            expanding-window comparison report
``structure validate``  check a grouping-structure file

Settings are read from an INI file (``--config``) with the sections listed
in :data:`SCHEMA`; command-line flags override the file, and the resolved
configuration is written to ``config.ini`` in the output directory.  Exit
codes: 0 success, 1 computation error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import colorsys
import configparser
import logging
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from gfts.assemble import ForecastSet, ModelOptions, SeriesForecast, base_forecasts, bootstrap_forecasts
from gfts.backtest import FORECAST_METHODS, BacktestConfig, forecast_origin, run_comparison
from gfts.lrcov import KERNELS
from gfts.panel import MortalityPanel, PanelError, SeriesData, SyntheticSpec, load_panel, save_panel, synthesize_panel
from gfts.reconcile import (
    RECONCILE_METHODS,
    TAGS,
    GroupStructure,
    StructureError,
    build_summing_matrix,
    coherence_residual,
    layout_structure,
    read_structure,
    resolve_structure,
    single_structure,
    write_structure,
)
from gfts.smoothing import SmoothingOptions, smooth_panel

logger = logging.getLogger("gfts")

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments, configuration or input files (exit code 2)."""


# ---------------------------------------------------------------------------
# value parsers


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


def _or_float(word: str) -> Callable[[str], float | str]:
    def parse(text: str):
        t = text.strip().lower()
        return word if t == word else float(t)

    return parse


def _bandwidth(text: str) -> str:
    t = text.strip().lower()
    if t != "plugin":
        v = float(t[6:] if t.startswith("fixed:") else t)
        if not v >= 1:
            raise ValueError("a fixed bandwidth must be >= 1")
        t = f"fixed:{v!r}"
    return t


def _list(item: Callable) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        return tuple(item(t.strip()) for t in text.split(",") if t.strip())

    return parse


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_ints, _floats, _strs = _list(int), _list(float), _list(str)
_SMOOTH = SmoothingOptions()
_SYNTH = SyntheticSpec()

# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable, object]]] = {
    "run": {
        "input": (str, ""),
        "output": (str, ""),
        "seed": (_opt_int, None),
        "workers": (_opt_int, None),
        "structure": (str, ""),
        "layout": (_ints, ()),
    },
    "synthesize": {
        "layout": (_ints, _SYNTH.layout),
        "n": (int, _SYNTH.n),
        "ages": (int, _SYNTH.ages),
        "first_year": (int, _SYNTH.first_year),
        "K_true": (int, _SYNTH.K_true),
        "dynamics": (str, _SYNTH.dynamics),
        "phi": (float, _SYNTH.phi),
        "drift": (float, _SYNTH.drift),
        "score_sd": (_floats, (_SYNTH.score_sd,)),
        "dependence": (float, _SYNTH.dependence),
        "loading_spread": (float, _SYNTH.loading_spread),
        "area_effect": (float, _SYNTH.area_effect),
        "exposure_scale": (float, _SYNTH.exposure_scale),
        "noise_level": (float, _SYNTH.noise_level),
        "poisson": (_bool, _SYNTH.poisson),
        "outlier_years": (_ints, _SYNTH.outlier_years),
        "outlier_areas": (int, _SYNTH.outlier_areas),
        "outlier_size": (float, _SYNTH.outlier_size),
        "top": (str, _SYNTH.top),
    },
    "smoothing": {
        "knot_spacing": (float, _SMOOTH.knot_spacing),
        "penalty_order": (int, _SMOOTH.penalty_order),
        "lambda_grid": (_floats, tuple(float(x) for x in _SMOOTH.lambda_grid)),
        "monotone_from_age": (_opt_float, _SMOOTH.monotone_from_age),
        "floor": (float, _SMOOTH.floor),
    },
    "lrcov": {
        "kernel": (str, "bartlett"),
        "bandwidth": (_bandwidth, "plugin"),
    },
    "fpca": {
        "threshold": (float, 0.9),
        "max_K": (int, 10),
    },
    "scorecast": {
        "method": (str, "arima"),
        "max_p": (int, 3),
        "max_q": (int, 3),
        "max_d": (int, 2),
        "quick": (_bool, False),
    },
    "forecast": {
        "method": (str, "dmfts"),
        "reconcile": (str, "base"),
        "H": (int, 15),
        "alpha": (float, 0.2),
        "B": (int, 1000),
        "intervals": (_bool, True),
        "shrink": (_or_float("auto"), "auto"),
        "s_mode": (str, "age"),
    },
    "backtest": {
        "H": (int, 15),
        "train_end": (_opt_int, None),
        "alpha": (float, 0.2),
        "methods": (_strs, FORECAST_METHODS),
        "reconciliations": (_strs, RECONCILE_METHODS),
        "B": (int, 1000),
        "intervals": (_bool, True),
        "shrink": (_or_float("auto"), "auto"),
        "s_mode": (str, "age"),
    },
}

# configparser lower-cases keys; map back to the schema spelling
_KEYS = {s: {k.lower(): k for k in keys} for s, keys in SCHEMA.items()}


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Validated settings for one command: ``values[section][key]``."""

    values: dict

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "RunConfig":
        values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise FileNotFoundError(f"no such file: {p}")
            cp = configparser.ConfigParser(interpolation=None)
            try:
                cp.read(p, encoding="utf-8")
            except configparser.Error as exc:
                raise UsageError(f"{p}: {exc}") from exc
            for section in cp.sections():
                if section not in SCHEMA:
                    raise UsageError(f"{p}: unknown section [{section}]")
                for raw, text in cp.items(section):
                    key = _KEYS[section].get(raw)
                    if key is None:
                        raise UsageError(f"{p}: unknown key {raw!r} in [{section}]")
                    values[section][key] = _parse(section, key, text)
        for (section, key), value in overrides.items():
            if value is not None:
                values[section][key] = _parse(section, key, value) if isinstance(value, str) else value
        cfg = cls(values)
        cfg.validate()
        return cfg

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        seed = self["run"]["seed"]
        if seed is None:
            env = os.environ.get("GFTS_SEED", "").strip()
            try:
                seed = int(env) if env else 0
            except ValueError as exc:
                raise UsageError(f"GFTS_SEED must be an integer, got {env!r}") from exc
        return seed

    @property
    def workers(self) -> int:
        w = self["run"]["workers"]
        return max(1, os.cpu_count() or 1) if w is None else w

    def smoothing(self) -> SmoothingOptions:
        s = self["smoothing"]
        return SmoothingOptions(s["knot_spacing"], s["penalty_order"], s["lambda_grid"],
                                s["monotone_from_age"], s["floor"])

    def model(self) -> ModelOptions:
        sc = self["scorecast"]
        quick = sc["quick"]
        return ModelOptions(kernel=self["lrcov"]["kernel"], bandwidth=self["lrcov"]["bandwidth"],
                            threshold=self["fpca"]["threshold"], max_K=self["fpca"]["max_K"],
                            score_method=sc["method"], max_p=1 if quick else sc["max_p"],
                            max_q=1 if quick else sc["max_q"], max_d=sc["max_d"])

    def synthetic(self) -> SyntheticSpec:
        s = dict(self["synthesize"])
        sd = s["score_sd"]
        s["score_sd"] = sd[0] if len(sd) == 1 else sd
        return SyntheticSpec(**s)

    def validate(self) -> None:
        try:
            self.smoothing()
            self.synthetic().validate()
            m = self.model()
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid configuration: {exc}") from exc
        if m.kernel not in KERNELS:
            raise UsageError(f"lrcov.kernel must be one of {tuple(KERNELS)}")
        if m.score_method not in ("arima", "rwd"):
            raise UsageError("scorecast.method must be arima or rwd")
        if not 0 < m.threshold <= 1:
            raise UsageError("fpca.threshold must lie in (0, 1]")
        if m.max_K < 1:
            raise UsageError("fpca.max_K must be >= 1")
        if min(m.max_p, m.max_q, m.max_d) < 0:
            raise UsageError("scorecast.max_p/q/d must be >= 0")
        f = self["forecast"]
        if f["method"] not in FORECAST_METHODS:
            raise UsageError(f"forecast.method must be one of {FORECAST_METHODS}")
        if f["reconcile"] not in RECONCILE_METHODS:
            raise UsageError(f"forecast.reconcile must be one of {RECONCILE_METHODS}")
        for sec in ("forecast", "backtest"):
            d = self[sec]
            if d["H"] < 1 or d["B"] < 1:
                raise UsageError(f"{sec}.H and {sec}.B must be positive")
            if not 0 < d["alpha"] < 0.5:
                raise UsageError(f"{sec}.alpha must lie in (0, 0.5)")
            if d["s_mode"] not in ("age", "pooled"):
                raise UsageError(f"{sec}.s_mode must be age or pooled")
        try:
            self.backtest().validate()
        except ValueError as exc:
            raise UsageError(f"invalid configuration: {exc}") from exc
        if self["run"]["workers"] is not None and self["run"]["workers"] < 1:
            raise UsageError("run.workers must be >= 1")

    def backtest(self, hierarchies: tuple = ()) -> BacktestConfig:
        b = self["backtest"]
        return BacktestConfig(H=b["H"], train_end=b["train_end"], alpha=b["alpha"], methods=b["methods"],
                              reconciliations=b["reconciliations"], hierarchies=hierarchies, B=b["B"],
                              seed=self.seed, shrink=b["shrink"], s_mode=b["s_mode"],
                              intervals=b["intervals"], workers=self.workers, model=self.model())

    def write(self, path: Path, sections: tuple) -> None:
        """Echo ``sections`` (plus the resolved seed) as INI text."""
        lines = []
        for section in sections:
            lines.append(f"[{section}]")
            for key, value in self.values[section].items():
                if section == "run" and key == "seed":
                    value = self.seed
                if section == "run" and key == "workers":
                    continue  # does not affect results
                lines.append(f"{key} = {_fmt(value)}")
            lines.append("")
        path.write_text("\n".join(lines), encoding="utf-8")


def _parse(section: str, key: str, text: str):
    parser = SCHEMA[section][key][0]
    try:
        return parser(text)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"[{section}] {key}: cannot parse {text!r}") from exc


# ---------------------------------------------------------------------------
# helpers


def _required(cfg: RunConfig, key: str) -> str:
    value = cfg["run"][key]
    if not value:
        raise UsageError(f"no {key} given (argument or [run] {key})")
    return value


def _outdir(path: str) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path is not a directory: {out}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path: str) -> MortalityPanel:
    try:
        return load_panel(path)
    except PanelError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _structures(cfg: RunConfig, panel: MortalityPanel) -> dict[str, GroupStructure]:
    """Structures named in ``run.structure`` (comma list of fixtures or files)."""
    layout = cfg["run"]["layout"] or None
    out = {}
    for spec in _strs(cfg["run"]["structure"]):
        if spec not in TAGS and not Path(spec).is_file():
            raise FileNotFoundError(f"no such file: {spec}")
        try:
            s = resolve_structure(spec, layout)
        except StructureError as exc:
            raise UsageError(f"{spec}: {exc}") from exc
        missing = [str(v) for v in s.nodes if v not in panel.series]
        if missing:
            raise UsageError(f"{spec}: {len(missing)} structure nodes not in the panel, e.g. {missing[0]}")
        out[spec if spec in TAGS else Path(spec).stem] = s
    return out


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


def rainbow_svg(x: np.ndarray, curves: np.ndarray, title: str, years=None,
                width: int = 640, height: int = 400) -> str:
    """Static SVG line chart: one polyline per row of ``curves``, coloured
    red (first row) to violet (last row)."""
    n = curves.shape[0]
    pad_l, pad_r, pad_t, pad_b = 60, 20, 30, 40
    x0, x1 = float(x.min()), float(x.max())
    finite = curves[np.isfinite(curves)]
    y0, y1 = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    sx = (width - pad_l - pad_r) / max(x1 - x0, 1e-12)
    sy = (height - pad_t - pad_b) / (y1 - y0)

    def px(a, b):
        return f"{pad_l + (a - x0) * sx:.2f},{height - pad_b - (b - y0) * sy:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad_l}" y1="{height - pad_b}" x2="{width - pad_r}" y2="{height - pad_b}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{height - pad_b}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">Age</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.0f})">Log death rate</text>',
        f'<text x="{pad_l - 4}" y="{pad_t + 4}" text-anchor="end" font-size="10">{y1:.2f}</text>',
        f'<text x="{pad_l - 4}" y="{height - pad_b}" text-anchor="end" font-size="10">{y0:.2f}</text>',
    ]
    for t in range(n):
        r, g, b = colorsys.hsv_to_rgb(0.8 * t / max(n - 1, 1), 1.0, 0.85)
        ok = np.isfinite(curves[t])
        pts = " ".join(px(a, b_) for a, b_ in zip(x[ok], curves[t][ok]))
        label = f' data-year="{years[t]}"' if years is not None else ""
        parts.append(f'<polyline{label} fill="none" stroke-width="1" '
                     f'stroke="#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}" points="{pts}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def smoothed_panel(panel: MortalityPanel, curves: dict) -> MortalityPanel:
    """``panel`` with rates replaced by smoothed rates (deaths implied)."""
    series = {}
    for sid, data in panel.series.items():
        rate = np.exp(curves[sid])
        exposure = np.where(data.exposure > 0, data.exposure, np.nan)
        series[sid] = SeriesData(rate, exposure, rate * exposure)
    return MortalityPanel(panel.grid, panel.years, series)


# ---------------------------------------------------------------------------
# commands


def cmd_synthesize(args, cfg: RunConfig) -> int:
    out = _outdir(_required(cfg, "output"))
    spec = cfg.synthetic()
    panel, _ = synthesize_panel(spec, cfg.seed)
    save_panel(panel, out / "panel.csv")
    for tag in TAGS:
        write_structure(layout_structure(tag, spec.layout, spec.top), out / f"{tag}.csv")
    cfg.write(out / "config.ini", ("run", "synthesize"))
    print(f"wrote {out / 'panel.csv'}: {panel.summary()}")
    return EXIT_OK


def cmd_smooth(args, cfg: RunConfig) -> int:
    panel = _load(_required(cfg, "input"))
    out = _outdir(_required(cfg, "output"))
    curves = smooth_panel(panel, cfg.smoothing())
    save_panel(smoothed_panel(panel, curves), out / "smoothed.csv")
    rows = len(panel.series) * panel.n * panel.p
    if args.plot:
        plots = out / "plots"
        plots.mkdir(exist_ok=True)
        for sid, c in curves.items():
            svg = rainbow_svg(panel.grid.ages, c, str(sid), [int(y) for y in panel.years])
            (plots / f"{_safe_name(str(sid))}.svg").write_text(svg, encoding="utf-8")
    cfg.write(out / "config.ini", ("run", "smoothing"))
    print(f"wrote {rows} rows to {out / 'smoothed.csv'}")
    return EXIT_OK


def cmd_forecast(args, cfg: RunConfig) -> int:
    panel = _load(_required(cfg, "input"))
    f = cfg["forecast"]
    structures = _structures(cfg, panel)
    if len(structures) > 1:
        raise UsageError("forecast takes a single structure")
    if not structures and (f["method"] != "dfts" or f["reconcile"] != "base"):
        if len(panel.series) == 1 and f["reconcile"] == "base":
            structures = {"single": single_structure(panel.ids[0])}
        else:
            raise UsageError("dmfts and reconciliation need --structure")
    out = _outdir(_required(cfg, "output"))
    curves = smooth_panel(panel, cfg.smoothing())
    H, recon, ages = f["H"], f["reconcile"], panel.grid.labels()
    if structures:
        structure = next(iter(structures.values()))
        bt = BacktestConfig(H=H, alpha=f["alpha"], reconciliations=(recon,), B=f["B"], seed=cfg.seed,
                            shrink=f["shrink"], s_mode=f["s_mode"], intervals=f["intervals"], model=cfg.model())
        of = forecast_origin(curves, panel, structure, f["method"], panel.n - 1, H, bt, ages)
        series = {}
        for v in structure.nodes:
            pt = of.point[recon][v]
            lo = of.lower[recon][v] if f["intervals"] else pt
            hi = of.upper[recon][v] if f["intervals"] else pt
            series[v] = SeriesForecast(pt, lo, hi, np.full(H, np.nan))
        fs = ForecastSet(series, f["alpha"], ages)
        if recon != "base":
            S = build_summing_matrix(structure, panel, int(panel.years[-1]), f["s_mode"])
            print(f"coherence residual {coherence_residual(of.point[recon], structure, S):.3e}")
    else:
        nodes = base_forecasts(curves, [(v,) for v in panel.ids], H, cfg.model(), intervals=f["intervals"])
        if f["intervals"]:
            fs, _ = bootstrap_forecasts(nodes, f["alpha"], f["B"], (cfg.seed, int(panel.years[-1])), ages)
        else:
            fs = ForecastSet({v: SeriesForecast(nf.point, nf.point, nf.point, np.full(H, np.nan))
                              for v, nf in nodes.items()}, f["alpha"], ages)
    fs.to_csv(out / "forecast.csv")
    cfg.write(out / "config.ini", ("run", "smoothing", "lrcov", "fpca", "scorecast", "forecast"))
    print(f"wrote {out / 'forecast.csv'}: {len(fs.series)} series, H = {H}")
    return EXIT_OK


def cmd_backtest(args, cfg: RunConfig) -> int:
    panel = _load(_required(cfg, "input"))
    structures = _structures(cfg, panel)
    if not structures:
        raise UsageError("backtest needs --structure")
    out = _outdir(_required(cfg, "output"))
    config = cfg.backtest(tuple(structures))
    report = run_comparison(panel, structures, config, smoothing=cfg.smoothing())
    report.write_csv(out / "report.csv")
    summary = report.summary()
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    cfg.write(out / "config.ini", ("run", "smoothing", "lrcov", "fpca", "scorecast", "backtest"))
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_structure_validate(args, cfg: RunConfig) -> int:
    path = Path(args.file)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        s = read_structure(path)
    except StructureError as exc:
        print(f"{path}: invalid structure: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    if args.panel:
        panel = _load(args.panel)
        missing = [str(v) for v in s.nodes if v not in panel.series]
        if missing:
            print(f"{path}: {len(missing)} nodes not in {args.panel}, e.g. {missing[0]}", file=sys.stderr)
            return EXIT_COMPUTE
    counts = [sum(1 for v in s.nodes if s.level[v] == lev) for lev in s.levels()]
    levels = ", ".join(f"{lev} {c}" for lev, c in zip(s.levels(), counts))
    print(f"{path}: valid, {len(s.nodes)} nodes, {len(s.bottom)} bottom series ({levels})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, output: bool = True) -> None:
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--seed", type=int, dest="run.seed", help="random seed (default: GFTS_SEED or 0)")
    p.add_argument("--workers", type=int, dest="run.workers", help="worker processes (default: all CPUs)")
    if output:
        p.add_argument("-o", "--output", dest="run.output", help="output directory")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kernel", dest="lrcov.kernel", choices=tuple(KERNELS))
    p.add_argument("--bandwidth", dest="lrcov.bandwidth", help="'plugin', 'fixed:<v>' or a number")
    p.add_argument("--threshold", dest="fpca.threshold", type=float)
    p.add_argument("--max-K", dest="fpca.max_K", type=int)
    p.add_argument("--score-method", dest="scorecast.method", choices=("arima", "rwd"))
    p.add_argument("--quick", dest="scorecast.quick", action="store_const", const=True,
                   help="quick ARIMA grid (p, q <= 1)")


def _structure_flags(p: argparse.ArgumentParser, many: bool = False) -> None:
    p.add_argument("--structure", dest="run.structure",
                   help=("comma list of " if many else "") + f"fixture names {TAGS} or structure files")
    p.add_argument("--layout", dest="run.layout", help="prefectures per region, e.g. 2,2 (for fixture names)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfts", description="Grouped functional time series forecasting")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="write a synthetic panel and structure files")
    _common(p)
    p.add_argument("--layout", dest="synthesize.layout", help="prefectures per region, e.g. 2,2")
    p.add_argument("--years", dest="synthesize.n", type=int)
    p.add_argument("--ages", dest="synthesize.ages", type=int)
    p.add_argument("--dynamics", dest="synthesize.dynamics", choices=("white", "ar1", "rwd"))
    p.add_argument("--noise-level", dest="synthesize.noise_level", type=float)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("smooth", help="smooth every curve of a panel")
    p.add_argument("run.input", nargs="?", default=None, metavar="input", help="panel CSV (or [run] input)")
    _common(p)
    p.add_argument("--plot", action="store_true", help="write one rainbow SVG per series")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("forecast", help="forecast from the last data year")
    p.add_argument("run.input", nargs="?", default=None, metavar="input", help="panel CSV (or [run] input)")
    _common(p)
    _structure_flags(p)
    _model_flags(p)
    p.add_argument("--method", dest="forecast.method", choices=FORECAST_METHODS)
    p.add_argument("--reconcile", dest="forecast.reconcile", choices=RECONCILE_METHODS)
    p.add_argument("-H", "--horizon", dest="forecast.H", type=int)
    p.add_argument("--alpha", dest="forecast.alpha", type=float)
    p.add_argument("-B", "--bootstrap", dest="forecast.B", type=int)
    p.add_argument("--no-intervals", dest="forecast.intervals", action="store_const", const=False)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("backtest", help="expanding-window method comparison")
    p.add_argument("run.input", nargs="?", default=None, metavar="input", help="panel CSV (or [run] input)")
    _common(p)
    _structure_flags(p, many=True)
    _model_flags(p)
    p.add_argument("--methods", help="comma list drawn from dfts, dmfts, base, bu, ols, mint")
    p.add_argument("-H", "--horizon", dest="backtest.H", type=int)
    p.add_argument("--train-end", dest="backtest.train_end", type=int)
    p.add_argument("--alpha", dest="backtest.alpha", type=float)
    p.add_argument("-B", "--bootstrap", dest="backtest.B", type=int)
    p.add_argument("--no-intervals", dest="backtest.intervals", action="store_const", const=False)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("structure", help="grouping-structure utilities")
    ssub = p.add_subparsers(dest="action", required=True)
    v = ssub.add_parser("validate", help="check a structure file")
    v.add_argument("file")
    v.add_argument("--panel", help="also check that every node is in this panel")
    _common(v, output=False)
    v.set_defaults(func=cmd_structure_validate)
    return parser


def _overrides(args) -> dict:
    out = {}
    for name, value in vars(args).items():
        if "." in name and value is not None:
            section, key = name.split(".", 1)
            out[(section, key)] = value
    methods = getattr(args, "methods", None)
    if methods:
        tokens = _strs(methods)
        bad = [t for t in tokens if t not in FORECAST_METHODS + RECONCILE_METHODS]
        if bad:
            raise UsageError(f"--methods: unknown {bad}")
        fm = tuple(t for t in tokens if t in FORECAST_METHODS)
        rm = tuple(t for t in tokens if t in RECONCILE_METHODS)
        if fm:
            out[("backtest", "methods")] = fm
        if rm:
            out[("backtest", "reconciliations")] = rm
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
        return args.func(args, cfg)
    except FileNotFoundError as exc:
        print(f"gfts: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, OSError) as exc:
        print(f"gfts: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # computation failures
        print(f"gfts: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
