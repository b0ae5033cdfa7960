"""Weighted penalized regression splines for log mortality curves.

Each year's log-rate curve is smoothed on its own: a cubic B-spline fit
minimising ``sum_i w_i (y_i - f(x_i))^2 + lam * int f^(q)(x)^2 dx`` with
``lam`` picked by generalized cross-validation, followed by an isotonic
(non-decreasing) correction at old ages.  Variance weights come from the
delta-method variance of a log central rate, ``(1 - m) / (m E)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from gfts.panel import DEFAULT_FLOOR, AgeGrid, MortalityPanel, SeriesId

logger = logging.getLogger(__name__)

DEGREE = 3


class SmoothingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SmoothingOptions:
    knot_spacing: float = 2.0
    penalty_order: int = 2
    lambda_grid: tuple[float, ...] = tuple(np.logspace(-8, 4, 37))
    monotone_from_age: float | None = 65.0
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if self.knot_spacing <= 0:
            raise ValueError("knot_spacing must be positive")
        if self.penalty_order not in (1, 2, 3):
            raise ValueError("penalty_order must be 1, 2 or 3 for cubic splines")
        if len(self.lambda_grid) == 0 or min(self.lambda_grid) <= 0:
            raise ValueError("lambda_grid must hold positive values")


@dataclass(frozen=True)
class SmoothCurve:
    values: np.ndarray
    weights: np.ndarray
    lam: float
    gcv: np.ndarray = field(repr=False, default=None)


def variance_weights(rate, exposure) -> np.ndarray:
    """Inverse delta-method variances ``m E / (1 - m)`` of log rates.

    Cells with a missing rate or non-positive exposure get weight 0.
    Rates at or above 1 are clamped to ``1 - 1e-10`` with a warning.
    """
    m = np.array(rate, dtype=float, ndmin=1)
    e = np.array(exposure, dtype=float, ndmin=1)
    ok = np.isfinite(m) & np.isfinite(e) & (e > 0)
    if np.any(m[ok] >= 1.0):
        warnings.warn("rate >= 1 clamped to 1 - 1e-10 in variance weights", RuntimeWarning)
        m = np.where(ok & (m >= 1.0), 1.0 - 1e-10, m)
    w = np.zeros(m.shape)
    mm = np.clip(m[ok], 0.0, None)
    w[ok] = mm * e[ok] / (1.0 - mm)
    return w


def isotonic_increasing(y, w=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        vals.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            wsum = wts[-2] + wts[-1]
            merged = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / wsum
            size = sizes[-2] + sizes[-1]
            del vals[-1], wts[-1], sizes[-1]
            vals[-1], wts[-1], sizes[-1] = merged, wsum, size
    return np.repeat(vals, sizes)


class SplineBasis:
    """Cubic B-spline design and roughness penalty on an age grid."""

    def __init__(self, grid: AgeGrid, knot_spacing: float = 2.0, penalty_order: int = 2):
        x = grid.ages
        lo, hi = float(x[0]), float(x[-1])
        interior = np.arange(lo + knot_spacing, hi - 1e-9 * (hi - lo), knot_spacing)
        breaks = np.concatenate([[lo], interior, [hi]])
        self.knots = np.concatenate([[lo] * DEGREE, breaks, [hi] * DEGREE])
        self.m = len(self.knots) - DEGREE - 1
        self.x = x
        self.design = BSpline.design_matrix(x, self.knots, DEGREE).toarray()
        self.penalty = self._penalty(breaks, penalty_order)

    def _penalty(self, breaks, q):
        # B^(q) is piecewise polynomial of degree 3 - q; 4-point Gauss is exact
        nodes, weights = np.polynomial.legendre.leggauss(4)
        a, b = breaks[:-1], breaks[1:]
        half = (b - a) / 2.0
        pts = ((a + b) / 2.0)[:, None] + half[:, None] * nodes[None, :]
        wts = half[:, None] * weights[None, :]
        pts, wts = pts.ravel(), wts.ravel()
        eye = np.eye(self.m)
        deriv = np.column_stack(
            [BSpline(self.knots, eye[j], DEGREE).derivative(q)(pts) for j in range(self.m)]
        )
        return deriv.T @ (wts[:, None] * deriv)


def smooth_curve(
    y,
    w,
    grid: AgeGrid,
    opts: SmoothingOptions | None = None,
    basis: SplineBasis | None = None,
) -> SmoothCurve:
    """Smooth one log-rate curve.

    Parameters
    ----------
    y : array of shape (p,)
        Log rates; ``NaN`` marks missing cells.
    w : array of shape (p,)
        Non-negative observation weights (0 for missing cells).
    grid : AgeGrid
    opts : SmoothingOptions, optional
    basis : SplineBasis, optional
        Precomputed basis for ``grid`` and ``opts``; built when omitted.

    Returns
    -------
    SmoothCurve
        Fitted values at every grid age, including the missing ones.
    """
    opts = opts or SmoothingOptions()
    basis = basis or SplineBasis(grid, opts.knot_spacing, opts.penalty_order)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    use = np.isfinite(y) & (w > 0)
    n_obs = int(use.sum())
    if n_obs == 0:
        raise SmoothingError("curve has no observed cells")
    if n_obs < opts.penalty_order + 2:
        raise SmoothingError(f"only {n_obs} observed cells; need {opts.penalty_order + 2}")

    wn = w[use] / w[use].mean()
    B = basis.design[use]
    yo = y[use]
    G = B.T @ (wn[:, None] * B)
    rhs = B.T @ (wn * yo)
    try:
        L = linalg.cholesky(G, lower=True)
    except linalg.LinAlgError:
        # basis functions without data; a tiny ridge leaves the fit unchanged elsewhere
        ridge = 1e-10 * np.trace(G) / G.shape[0]
        try:
            L = linalg.cholesky(G + ridge * np.eye(G.shape[0]), lower=True)
        except linalg.LinAlgError as exc:
            raise SmoothingError("ill-conditioned spline system") from exc
    # Demmler-Reinsch: G + lam P = L (I + lam U s U^T) L^T
    Linv_P = linalg.solve_triangular(L, basis.penalty, lower=True)
    A = linalg.solve_triangular(L, Linv_P.T, lower=True)
    s, U = linalg.eigh((A + A.T) / 2.0)
    s = np.clip(s, 0.0, None)
    z = U.T @ linalg.solve_triangular(L, rhs, lower=True)

    lams = np.sort(np.asarray(opts.lambda_grid, dtype=float))
    gcv = np.empty(lams.size)
    coefs = []
    for k, lam in enumerate(lams):
        shrink = 1.0 / (1.0 + lam * s)
        c = linalg.solve_triangular(L.T, U @ (shrink * z), lower=False)
        resid = yo - B @ c
        rss = float(np.sum(wn * resid**2))
        edf = float(shrink.sum())
        denom = max(n_obs - edf, 1e-12)
        gcv[k] = n_obs * rss / denom**2
        coefs.append(c)
    if not np.all(np.isfinite(gcv)):
        raise SmoothingError("non-finite GCV score")
    best = np.flatnonzero(gcv <= gcv.min() * (1.0 + 1e-10))[-1]  # ties -> larger lam
    values = basis.design @ coefs[best]

    if opts.monotone_from_age is not None:
        tail = grid.ages >= opts.monotone_from_age
        if tail.sum() > 1:
            pw = np.where(use, w, 0.0)[tail]
            floor = 1e-6 * pw.max() if pw.max() > 0 else 1.0
            values[tail] = isotonic_increasing(values[tail], np.maximum(pw, floor))
    return SmoothCurve(values, w, float(lams[best]), gcv)


def smooth_series(rate, exposure, grid: AgeGrid, opts: SmoothingOptions | None = None,
                  basis: SplineBasis | None = None, years=None, label: str = "") -> np.ndarray:
    """Smooth every year of one series; returns the ``n x p`` log curves."""
    opts = opts or SmoothingOptions()
    basis = basis or SplineBasis(grid, opts.knot_spacing, opts.penalty_order)
    rate = np.atleast_2d(np.asarray(rate, dtype=float))
    exposure = np.atleast_2d(np.asarray(exposure, dtype=float))
    years = range(rate.shape[0]) if years is None else years
    out = np.empty(rate.shape)
    for t, year in enumerate(years):
        obs = np.isfinite(rate[t])
        y = np.full(rate.shape[1], np.nan)
        y[obs] = np.log(np.maximum(rate[t, obs], opts.floor))
        w = variance_weights(rate[t], exposure[t])
        try:
            out[t] = smooth_curve(y, w, grid, opts, basis).values
        except SmoothingError as exc:
            raise SmoothingError(f"series {label}, year {year}: {exc}") from exc
    return out


def smooth_panel(panel: MortalityPanel, opts: SmoothingOptions | None = None) -> dict[SeriesId, np.ndarray]:
    """Smooth all series of ``panel`` year by year.

    Returns a map from series id to its ``n x p`` matrix of smoothed log rates.
    """
    opts = opts or SmoothingOptions()
    basis = SplineBasis(panel.grid, opts.knot_spacing, opts.penalty_order)
    return {
        sid: smooth_series(d.rate, d.exposure, panel.grid, opts, basis, panel.years, str(sid))
        for sid, d in panel.series.items()
    }
