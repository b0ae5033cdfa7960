"""Point forecast curves and calibrated bootstrap prediction intervals.

A block of series is modelled jointly: FPCA on the stacked curves, one
univariate model per score column, then ``mu + sum_k beta_{n+h,k} phi_k``.
Intervals follow three steps per horizon ``h``:

1. in-sample ``h``-step forecast errors from every origin ``xi = K..n-h``
   with the components, mean and score models held fixed;
2. pointwise ``alpha/2`` and ``1 - alpha/2`` quantiles of ``B`` error curves
   resampled with replacement;
3. a scalar ``pi`` chosen by bisection so that ``pi`` times those bounds
   covers a fraction ``1 - alpha`` of the in-sample errors.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from gfts.fpca import FpcaModel, fit_block, reconstruct, stack, unstack
from gfts.scorecast import ScoreModel, fit_scores, forecast_scores

logger = logging.getLogger(__name__)

PI_MAX = 100.0


class IntervalInfeasibleError(ValueError):
    """Fewer than four in-sample errors are available for a horizon."""


@dataclass(frozen=True)
class ModelOptions:
    kernel: str = "bartlett"
    bandwidth: float | str = "plugin"
    threshold: float = 0.9
    max_K: int = 10
    score_method: str = "arima"
    max_p: int = 3
    max_q: int = 3
    max_d: int = 2


@dataclass
class BlockModel:
    fpca: FpcaModel
    score_models: list[ScoreModel]
    curves: np.ndarray  # n x d stacked training curves

    @property
    def members(self) -> tuple:
        return self.fpca.members

    @property
    def K(self) -> int:
        return self.fpca.K

    @property
    def n(self) -> int:
        return self.curves.shape[0]


@dataclass
class ErrorSample:
    """In-sample ``h``-step errors; row ``z`` targets curve index ``targets[z]``."""

    errors: np.ndarray  # M x d
    targets: np.ndarray  # (M,) 0-based time index of the forecast target
    h: int
    K: int

    @property
    def M(self) -> int:
        return self.errors.shape[0]


def fit_block_model(curves: Mapping, block: Sequence, opts: ModelOptions = ModelOptions()) -> BlockModel:
    """FPCA and score models for one joint block of series."""
    panel = stack(curves, block)
    fp = fit_block(panel, opts.kernel, opts.bandwidth, opts.threshold, opts.max_K)
    models = fit_scores(fp.scores, opts.score_method, opts.max_p, opts.max_q, opts.max_d)
    return BlockModel(fp, models, panel.values)


def forecast_score_matrix(bm: BlockModel, h: int, stop: int | None = None) -> np.ndarray:
    """``h x K`` score forecasts from the first ``stop`` scores (default all)."""
    scores = bm.fpca.scores if stop is None else bm.fpca.scores[:stop]
    cols = [forecast_scores(m, scores[:, k], h) for k, m in enumerate(bm.score_models)]
    return np.column_stack(cols) if cols else np.zeros((h, 0))


def point_forecast(bm: BlockModel, h: int) -> dict:
    """Per-series ``h x p`` forecast curves (log scale)."""
    if h < 1:
        raise ValueError("horizon must be >= 1")
    rows = reconstruct(bm.fpca, forecast_score_matrix(bm, h))
    return unstack(rows, bm.members, bm.fpca.p)


def insample_errors_all(bm: BlockModel, H: int) -> dict[int, ErrorSample]:
    """:func:`insample_errors` for every ``h = 1..H`` sharing one pass over origins.

    Horizons with fewer than four errors are omitted.
    """
    n, K = bm.n, bm.K
    fc = {xi: reconstruct(bm.fpca, forecast_score_matrix(bm, H, xi)) for xi in range(K, n)}
    out = {}
    for h in range(1, H + 1):
        origins = range(K, n - h + 1)
        if len(origins) < 4:
            continue
        targets = np.array([xi + h - 1 for xi in origins])
        errs = np.array([bm.curves[xi + h - 1] - fc[xi][h - 1] for xi in origins])
        out[h] = ErrorSample(errs, targets, h, K)
    return out


def insample_errors(bm: BlockModel, h: int) -> ErrorSample:
    """``h``-step errors ``f_{xi+h} - f_hat_{xi+h}`` for ``xi = K..n-h``.

    Forecasts use only scores up to ``xi`` but the full-sample components,
    mean and score models; ``M = n - h - K + 1``.
    """
    M = bm.n - h - bm.K + 1
    if M < 4:
        raise IntervalInfeasibleError(f"h = {h}: only {max(M, 0)} in-sample errors (need 4)")
    return insample_errors_all(bm, h)[h]


def _quantiles(x: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = np.quantile(x, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0, method="linear")
    return lo, hi


def bootstrap_bounds(errors, B: int = 1000, alpha: float = 0.2, seed=None, draws=None):
    """Pointwise bootstrap quantiles ``(gamma_lb, gamma_ub)`` of the error curves.

    Parameters
    ----------
    errors : ErrorSample or (M, p) array
    B : int
        Bootstrap size, at least 100.
    alpha : float
        Significance level in (0, 0.5).
    seed : int, SeedSequence or Generator
        Source of the resampling indices.
    draws : (B,) int array, optional
        Precomputed resampling indices (overrides ``seed``).
    """
    E = errors.errors if isinstance(errors, ErrorSample) else np.atleast_2d(np.asarray(errors, dtype=float))
    if B < 100:
        raise ValueError("B must be at least 100")
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    if draws is None:
        draws = np.random.default_rng(seed).integers(0, E.shape[0], size=B)
    return _quantiles(E[draws], alpha)


def coverage(errors, bounds, pi: float) -> float:
    E = errors.errors if isinstance(errors, ErrorSample) else np.asarray(errors, dtype=float)
    lb, ub = bounds
    return float(np.mean((pi * lb <= E) & (E <= pi * ub)))


def calibrate_pi(errors, bounds, alpha: float = 0.2, tol: float = 1e-4, pi_max: float = PI_MAX) -> float:
    """Smallest ``pi`` (to ``tol``) whose scaled bounds cover ``1 - alpha`` of the errors."""
    target = 1.0 - alpha
    if coverage(errors, bounds, 0.0) >= target:
        return 0.0
    # coverage is monotone in pi only where gamma_lb <= 0 <= gamma_ub; with
    # same-signed bounds it can fall again, so bracket on a doubling grid
    hi = 1.0 / 64.0
    while hi < pi_max and coverage(errors, bounds, hi) < target:
        hi *= 2.0
    hi = min(hi, pi_max)
    if coverage(errors, bounds, hi) < target:
        warnings.warn(f"bounds cannot reach {target:.0%} coverage; pi set to {pi_max}", RuntimeWarning)
        return pi_max
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if coverage(errors, bounds, mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def interval_forecast(point, bounds, pi: float):
    """``(point + pi * gamma_lb, point + pi * gamma_ub)``."""
    if pi < 0:
        raise ValueError("pi must be non-negative")
    lb, ub = bounds
    return point + pi * lb, point + pi * ub


# ---------------------------------------------------------------------------
# many-series assembly


@dataclass
class SeriesForecast:
    point: np.ndarray  # H x p (log rate)
    lower: np.ndarray
    upper: np.ndarray
    pi: np.ndarray  # (H,)


@dataclass
class ForecastSet:
    series: dict
    alpha: float
    ages: list = field(default_factory=list)

    @property
    def H(self) -> int:
        return next(iter(self.series.values())).point.shape[0]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "horizon", "age", "point", "lower", "upper", "alpha"])
            for sid, fc in self.series.items():
                H, p = fc.point.shape
                ages = self.ages or [str(i) for i in range(p)]
                for h in range(H):
                    for i in range(p):
                        w.writerow([str(sid), h + 1, ages[i], repr(float(fc.point[h, i])),
                                    repr(float(fc.lower[h, i])), repr(float(fc.upper[h, i])), repr(self.alpha)])


@dataclass
class NodeForecast:
    """Base point forecasts and in-sample errors of one series."""

    point: np.ndarray  # H x p
    errors: dict  # h -> (M x p errors, targets)


def base_forecasts(curves: Mapping, blocks: Sequence[Sequence], H: int,
                   opts: ModelOptions = ModelOptions(), intervals: bool = True) -> dict:
    """Fit every block and return ``{series: NodeForecast}`` in block order."""
    out = {}
    for block in blocks:
        bm = fit_block_model(curves, block, opts)
        point = point_forecast(bm, H)
        errs = insample_errors_all(bm, H) if intervals else {}
        p = bm.fpca.p
        for l, sid in enumerate(bm.members):
            sl = slice(l * p, (l + 1) * p)
            out[sid] = NodeForecast(point[sid], {h: (e.errors[:, sl], e.targets) for h, e in errs.items()})
    return out


def _errors_for(nf: NodeForecast, h: int):
    """Errors at ``h`` or, when too few, at the widest feasible shorter horizon."""
    for hh in range(h, 0, -1):
        if hh in nf.errors:
            return nf.errors[hh]
    return None


def horizon_draws(seed, h: int, B: int) -> np.ndarray:
    """Common uniform draws for horizon ``h``; one derived stream per horizon.

    ``seed`` is an int or a tuple of ints (e.g. ``(seed, origin_year)``).
    """
    entropy = [int(s) for s in (seed if isinstance(seed, (tuple, list)) else (seed,))]
    return np.random.default_rng(np.random.SeedSequence(entropy + [int(h)])).random(B)


def _indices(u: np.ndarray, M: int) -> np.ndarray:
    # counted back from the latest target so equal-u draws share target years
    return M - 1 - np.minimum((u * M).astype(int), M - 1)


def bootstrap_forecasts(nodes: Mapping, alpha: float = 0.2, B: int = 1000, seed=0,
                        ages=None, keep_samples: bool = False):
    """Calibrated intervals for every node, plus optional bootstrap sample curves.

    Returns ``(ForecastSet, samples)`` where ``samples[h][sid]`` is a
    ``B x p`` array of ``point + pi * error`` curves (log scale) drawn with
    common uniforms across nodes, or ``None`` when ``keep_samples`` is false.
    """
    ids = list(nodes)
    H = nodes[ids[0]].point.shape[0]
    out = {sid: SeriesForecast(nf.point.copy(), nf.point.copy(), nf.point.copy(), np.zeros(H))
           for sid, nf in nodes.items()}
    samples = {} if keep_samples else None
    for h in range(1, H + 1):
        u = horizon_draws(seed, h, B)
        if keep_samples:
            samples[h] = {}
        for sid, nf in nodes.items():
            ent = _errors_for(nf, h)
            fc = out[sid]
            if ent is None:
                logger.warning("%s: no in-sample errors for h=%d; degenerate interval", sid, h)
                if keep_samples:
                    samples[h][sid] = np.repeat(fc.point[h - 1][None, :], B, axis=0)
                continue
            E = ent[0]
            draws = _indices(u, E.shape[0])
            bounds = bootstrap_bounds(E, B, alpha, draws=draws)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                pi = calibrate_pi(E, bounds, alpha)
            if pi == PI_MAX:
                logger.warning("%s h=%d: pi at its cap %g", sid, h, PI_MAX)
            fc.pi[h - 1] = pi
            fc.lower[h - 1], fc.upper[h - 1] = interval_forecast(fc.point[h - 1], bounds, pi)
            if keep_samples:
                samples[h][sid] = fc.point[h - 1] + pi * E[draws]
    return ForecastSet(out, alpha, list(ages) if ages is not None else []), samples


def sample_quantiles(samples: np.ndarray, alpha: float):
    """Type-7 pointwise ``alpha/2`` and ``1 - alpha/2`` quantiles of ``B x p`` samples."""
    return _quantiles(samples, alpha)
