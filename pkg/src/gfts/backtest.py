"""Expanding-window evaluation and the method comparison grid.

From each origin year ``o`` (training data up to and including ``o``) the
models are refitted and forecast ``min(H, last - o)`` years ahead.  With
origins ``last - H, ..., last - 1`` this gives ``H + 1 - h`` forecasts at
horizon ``h``.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from gfts.assemble import ModelOptions, base_forecasts, bootstrap_forecasts, sample_quantiles
from gfts.panel import MortalityPanel
from gfts.reconcile import (
    GroupStructure,
    apply_projection,
    bottom_up,
    build_summing_matrix,
    from_rate_array,
    joint_blocks,
    mint_weights,
    projection,
    reconcile,
    to_rate_array,
)
from gfts.smoothing import SmoothingOptions, smooth_panel

logger = logging.getLogger(__name__)

FORECAST_METHODS = ("dfts", "dmfts")


# ---------------------------------------------------------------------------
# metrics


def rmsfe(actual, forecast) -> float:
    """``sqrt(mean((actual - forecast)^2))`` over all forecasts and ages.

    Both arrays are ``(count, p)``: the forecasts at one horizon.
    """
    a = np.asarray(actual, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if a.shape != f.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {f.shape}")
    if a.size == 0:
        raise ValueError("no forecasts to score")
    return float(np.sqrt(np.mean((a - f) ** 2)))


def interval_score(lb, ub, actual, alpha: float):
    """Pointwise interval score ``(ub - lb) + (2/alpha)`` times any exceedance."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lb, ub, y = (np.asarray(v, dtype=float) for v in (lb, ub, actual))
    below = np.where(y < lb, lb - y, 0.0)
    above = np.where(y > ub, y - ub, 0.0)
    out = (ub - lb) + (2.0 / alpha) * below + (2.0 / alpha) * above
    return float(out) if out.ndim == 0 else out


def mean_interval_score(lb, ub, actual, alpha: float) -> float:
    """Average of :func:`interval_score` over forecasts and ages."""
    s = np.asarray(interval_score(lb, ub, actual, alpha))
    if s.size == 0:
        raise ValueError("no forecasts to score")
    return float(np.mean(s))


def mean_stats(values) -> float:
    """Mean of per-horizon statistics."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise ValueError("no horizons to average")
    return float(np.mean(v))


# ---------------------------------------------------------------------------
# protocol


@dataclass(frozen=True)
class BacktestConfig:
    H: int = 15
    train_end: int | None = None  # last training year of the first origin
    alpha: float = 0.2
    methods: tuple = ("dfts", "dmfts")
    reconciliations: tuple = ("base", "bu", "ols", "mint")
    hierarchies: tuple = ("hierarchy1", "hierarchy2")
    B: int = 1000
    seed: int = 0
    shrink: float | str = "auto"
    s_mode: str = "age"
    intervals: bool = True
    workers: int = 1
    model: ModelOptions = field(default_factory=ModelOptions)

    def validate(self):
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        bad = set(self.methods) - set(FORECAST_METHODS)
        if bad or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {FORECAST_METHODS}")
        bad = set(self.reconciliations) - {"base", "bu", "ols", "mint"}
        if bad or not self.reconciliations:
            raise ValueError("reconciliations must be a non-empty subset of base, bu, ols, mint")


def origins(years: Sequence[int], config: BacktestConfig) -> list[int]:
    """Origin years; the first is ``train_end`` (default ``last - H``)."""
    years = [int(y) for y in years]
    last = years[-1]
    start = last - config.H if config.train_end is None else int(config.train_end)
    if start not in years or start >= last:
        raise ValueError(f"first training end {start} must be a data year before {last}")
    return [y for y in years if start <= y < last]


@dataclass
class OriginForecasts:
    origin: int
    point: dict  # recon method -> {node: H_o x p}
    lower: dict
    upper: dict


def _reconcile_samples(method, samples_h, structure, S, G):
    R = to_rate_array(samples_h, structure.nodes if method == "ols" or method == "mint" else structure.bottom)
    out = bottom_up(R, S) if method == "bu" else apply_projection(G[method], S, R)
    return from_rate_array(out, structure.nodes)


def forecast_origin(curves: Mapping, exposures: MortalityPanel, structure: GroupStructure, method: str,
                    origin_idx: int, H: int, config: BacktestConfig, ages=None) -> OriginForecasts:
    """Base and reconciled forecasts from data up to index ``origin_idx``."""
    train = {v: np.asarray(curves[v])[: origin_idx + 1] for v in structure.nodes}
    year = int(exposures.years[origin_idx])
    blocks = joint_blocks(structure, method)
    recs = config.reconciliations
    nodes = base_forecasts(train, blocks, H, config.model, intervals=config.intervals or "mint" in recs)
    S = build_summing_matrix(structure, exposures, year, config.s_mode) if set(recs) - {"base"} else None
    W = mint_weights(nodes, train, structure, config.shrink) if "mint" in recs else None
    base = {v: nodes[v].point for v in structure.nodes}
    p = base[structure.nodes[0]].shape[1]
    # one projection per method and origin, shared by points and samples
    G = {r: projection(S, r, W, p=p) for r in recs if r in ("ols", "mint")}
    point = {r: reconcile(r, base, structure, S, W, G.get(r)) for r in recs}
    lower, upper = {}, {}
    if config.intervals:
        need = any(r != "base" for r in recs)
        fs, samples = bootstrap_forecasts(nodes, config.alpha, config.B, (config.seed, year),
                                          ages=ages, keep_samples=need)
        for r in recs:
            if r == "base":
                lower[r] = {v: fs.series[v].lower for v in structure.nodes}
                upper[r] = {v: fs.series[v].upper for v in structure.nodes}
                continue
            lo = {v: np.empty((H, p)) for v in structure.nodes}
            hi = {v: np.empty((H, p)) for v in structure.nodes}
            for h in range(1, H + 1):
                rec = _reconcile_samples(r, samples[h], structure, S, G)
                qlo, qhi = sample_quantiles(np.stack([rec[v] for v in structure.nodes], axis=1), config.alpha)
                for k, v in enumerate(structure.nodes):
                    lo[v][h - 1], hi[v][h - 1] = qlo[k], qhi[k]
            lower[r], upper[r] = lo, hi
    return OriginForecasts(year, point, lower, upper)


@dataclass
class BacktestResult:
    structure: GroupStructure
    method: str
    hierarchy: str
    years: np.ndarray
    forecasts: list  # OriginForecasts per origin
    counts: dict  # h -> number of forecasts

    def horizon_arrays(self, recon: str, node, h: int, curves: Mapping):
        """Stacked ``(count, p)`` actual, point, lower and upper at horizon ``h``."""
        act, pt, lo, hi = [], [], [], []
        pos = {int(y): k for k, y in enumerate(self.years)}
        for of in self.forecasts:
            P = of.point[recon][node]
            if P.shape[0] < h:
                continue
            act.append(np.asarray(curves[node])[pos[of.origin] + h])
            pt.append(P[h - 1])
            if of.lower:
                lo.append(of.lower[recon][node][h - 1])
                hi.append(of.upper[recon][node][h - 1])
        return np.array(act), np.array(pt), (np.array(lo) if lo else None), (np.array(hi) if hi else None)


def _origin_job(args):
    return forecast_origin(*args)


def expanding_window(curves: Mapping, exposures: MortalityPanel, structure: GroupStructure, method: str,
                     config: BacktestConfig, hierarchy: str | None = None) -> BacktestResult:
    """Run every origin for one forecasting method and structure.

    ``curves`` holds smoothed log curves for all years; forecasts from an
    origin only ever see rows up to that origin.
    """
    config.validate()
    years = np.asarray(exposures.years)
    orig = origins(years, config)
    last = int(years[-1])
    pos = {int(y): k for k, y in enumerate(years)}
    jobs = [(curves, exposures, structure, method, pos[o], min(config.H, last - o), config) for o in orig]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            fcs = list(ex.map(_origin_job, jobs))
    else:
        fcs = [_origin_job(j) for j in jobs]
    counts = {h: sum(1 for o in orig if last - o >= h) for h in range(1, config.H + 1)}
    return BacktestResult(structure, method, hierarchy or structure.tag, years, fcs, counts)


# ---------------------------------------------------------------------------
# comparison grid and report


REPORT_HEADER = ["level", "series", "method", "hierarchy", "h", "rmsfe", "mean_interval_score"]


@dataclass
class BacktestReport:
    rows: list  # dicts with REPORT_HEADER keys
    counts: dict  # h -> forecasts per series/method
    alpha: float = 0.2

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                w.writerow([r["level"], r["series"], r["method"], r["hierarchy"], r["h"],
                            repr(r["rmsfe"]), "" if r["mean_interval_score"] is None else repr(r["mean_interval_score"])])

    def series_means(self) -> dict:
        """``(level, series, method, hierarchy) -> (Mean(RMSFE), Mean(P_alpha))``."""
        acc: dict = {}
        for r in self.rows:
            key = (r["level"], r["series"], r["method"], r["hierarchy"])
            acc.setdefault(key, ([], []))
            acc[key][0].append(r["rmsfe"])
            if r["mean_interval_score"] is not None:
                acc[key][1].append(r["mean_interval_score"])
        return {k: (mean_stats(a), mean_stats(b) if b else None) for k, (a, b) in acc.items()}

    def level_table(self) -> dict:
        """``(level, method, hierarchy) -> (Mean(RMSFE) x 100, Mean(P_alpha))``
        averaged arithmetically over the series of each level."""
        acc: dict = {}
        for (lev, _, meth, hier), (rm, isc) in self.series_means().items():
            acc.setdefault((lev, meth, hier), ([], []))
            acc[(lev, meth, hier)][0].append(rm)
            if isc is not None:
                acc[(lev, meth, hier)][1].append(isc)
        return {k: (100.0 * float(np.mean(a)), float(np.mean(b)) if b else None) for k, (a, b) in acc.items()}

    def summary(self) -> str:
        table = self.level_table()
        levels: list = []
        for lev, _, _ in table:
            if lev not in levels:
                levels.append(lev)
        lines = ["Mean(RMSFE) x 100 and Mean interval score by level (lower is better)", ""]
        for lev in levels:
            lines.append(f"[{lev}]")
            entries = sorted(((v[0], k[1], k[2], v[1]) for k, v in table.items() if k[0] == lev))
            for rank, (rm, meth, hier, isc) in enumerate(entries, start=1):
                isc_txt = "" if isc is None else f"  interval {isc:.5f}"
                lines.append(f"  {rank:2d}. {meth:<12s} {hier:<11s} rmsfe {rm:.4f}{isc_txt}")
            lines.append("")
        lines.append("forecast counts by horizon: " + ", ".join(f"h{h}={c}" for h, c in sorted(self.counts.items())))
        return "\n".join(lines) + "\n"


def score_result(res: BacktestResult, curves: Mapping, alpha: float, recons: Sequence[str]) -> list[dict]:
    rows = []
    for recon in recons:
        label = f"{res.method}:{recon}"
        for v in res.structure.nodes:
            for h in sorted(res.counts):
                if res.counts[h] == 0:
                    continue
                act, pt, lo, hi = res.horizon_arrays(recon, v, h, curves)
                isc = mean_interval_score(lo, hi, act, alpha) if lo is not None else None
                rows.append({"level": res.structure.level[v], "series": str(v), "method": label,
                             "hierarchy": res.hierarchy, "h": h, "rmsfe": rmsfe(act, pt), "mean_interval_score": isc})
    return rows


def run_comparison(panel: MortalityPanel, structures: Mapping[str, GroupStructure], config: BacktestConfig,
                   curves: Mapping | None = None, smoothing: SmoothingOptions | None = None) -> BacktestReport:
    """Every (forecasting method, reconciliation, hierarchy) in the grid.

    ``curves`` (smoothed log rates) are computed from ``panel`` when absent.
    """
    config.validate()
    if curves is None:
        curves = smooth_panel(panel, smoothing)
    rows: list = []
    counts: dict = {}
    for hier in config.hierarchies:
        structure = structures[hier]
        for method in config.methods:
            res = expanding_window(curves, panel, structure, method, config, hier)
            counts = res.counts
            rows.extend(score_result(res, curves, config.alpha, config.reconciliations))
    return BacktestReport(rows, counts, config.alpha)
