"""Univariate forecasting of principal component scores.

ARIMA(p, d, q) with ``d`` chosen by repeated KPSS level-stationarity tests,
(p, q) chosen by AICc over a full grid, and conditional-sum-of-squares
estimates found with Nelder-Mead.  AR and MA polynomials are parametrised
through partial autocorrelations, so every fitted model is stationary and
invertible.  A random walk with drift is the fallback.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

logger = logging.getLogger(__name__)

KPSS_CRITICAL_5PCT = 0.463
PACF_BOUND = 0.98
ROOT_MARGIN = 1.01
COMMON_ROOT_TOL = 0.2


@dataclass
class ScoreModel:
    order: tuple[int, int, int]
    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    drift: float = 0.0  # mean of the differenced series (level for d = 0)
    sigma2: float = 0.0
    aicc: float = math.inf
    converged: bool = True
    method: str = "arima"
    candidates: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return self.order[1]


def kpss_stat(x) -> float:
    """KPSS level-stationarity statistic with a Bartlett long-run variance
    and truncation lag ``floor(4 (n/100)^(1/4))``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    e = x - x.mean()
    s = np.cumsum(e)
    lags = int(math.floor(4.0 * (n / 100.0) ** 0.25))
    lrv = float(e @ e) / n
    for j in range(1, min(lags, n - 1) + 1):
        lrv += 2.0 * (1.0 - j / (lags + 1.0)) * float(e[j:] @ e[:-j]) / n
    scale = float(x @ x) / n
    if lrv <= 1e-20 * max(scale, np.finfo(float).tiny):
        return 0.0
    return float(s @ s) / (n * n * lrv)


def choose_d(y, max_d: int = 2, critical: float = KPSS_CRITICAL_5PCT) -> int:
    w = np.asarray(y, dtype=float)
    for d in range(max_d + 1):
        if w.size < 3 or kpss_stat(w) < critical:
            return d
        w = np.diff(w)
    return max_d


def pacf_to_poly(r) -> np.ndarray:
    """Map partial autocorrelations in (-1, 1) to stationary AR coefficients."""
    return np.array(_pacf_to_list(list(r)))


def _pacf_to_list(r: list) -> list:
    phi: list = []
    for rk in r:
        phi = [a - rk * b for a, b in zip(phi, reversed(phi))] + [rk]
    return phi


def poly_to_pacf(phi) -> np.ndarray | None:
    """Inverse of :func:`pacf_to_poly`; None if ``phi`` is not stationary."""
    phi = list(phi)
    r = []
    while phi:
        rk = phi[-1]
        if abs(rk) >= 1.0:
            return None
        r.append(rk)
        phi = [(a + rk * b) / (1.0 - rk * rk) for a, b in zip(phi[:-1], reversed(phi[:-1]))]
    return np.array(r[::-1])


def _start_values(z, p, q, start):
    """Hannan-Rissanen regression estimates mapped to the optimiser scale."""
    n = len(z)
    m = min(max(p, q) + 3, n // 4)
    if q and m >= 1:
        lagged = np.column_stack([z[m - i - 1 : n - i - 1] for i in range(m)])
        coef = np.linalg.lstsq(lagged, z[m:], rcond=None)[0]
        e = np.concatenate([np.zeros(m), z[m:] - lagged @ coef])
    else:
        e = np.zeros(n)
    t0 = max(start, m if q else 0, p, q)
    cols = [z[t0 - i - 1 : n - i - 1] for i in range(p)] + [e[t0 - j - 1 : n - j - 1] for j in range(q)]
    if n - t0 <= p + q:
        return np.zeros(p + q)
    beta = np.linalg.lstsq(np.column_stack(cols), z[t0:], rcond=None)[0]
    r_ar = poly_to_pacf(beta[:p]) if p else np.zeros(0)
    r_ma = poly_to_pacf(-beta[p:]) if q else np.zeros(0)
    if r_ar is None or r_ma is None:
        return np.zeros(p + q)
    r = np.clip(np.concatenate([r_ar, r_ma]) / PACF_BOUND, -0.95, 0.95)
    return np.arctanh(r)


def _unpack(x, p, q):
    # bounded away from the unit circle: near-unit AR/MA roots that cancel
    # let CSS fit deterministic cycles in pure noise
    r = [PACF_BOUND * math.tanh(v) for v in x]
    return _pacf_to_list(r[:p]), [-c for c in _pacf_to_list(r[p:])]


def _residuals(z, ar, ma, start):
    """Conditional residuals ``e_t``, ``t >= start``, pre-sample errors zero."""
    p = len(ar)
    u = np.array(z[start:], dtype=float)
    for i in range(p):
        u -= ar[i] * np.asarray(z[start - i - 1 : len(z) - i - 1])
    if len(ma):
        u = lfilter([1.0], np.concatenate([[1.0], ma]), u)
    return u


def _css(z: list, ar: list, ma: list, start: int) -> float:
    # scalar recursion; faster than array calls at score-series lengths
    p, q = len(ar), len(ma)
    e = [0.0] * q
    total = 0.0
    for t in range(start, len(z)):
        u = z[t]
        for i in range(p):
            u -= ar[i] * z[t - i - 1]
        for j in range(q):
            u -= ma[j] * e[-j - 1]
        if q:
            e.append(u)
        total += u * u
    return total


def _fit_candidate(z, p, q, start, floor):
    n_eff = len(z) - start
    zl = [float(v) for v in z]
    if p + q == 0:
        css = sum(v * v for v in zl[start:])
        return np.zeros(0), np.zeros(0), css, True

    long = n_eff > 80

    def css_of(x):
        ar, ma = _unpack(x, p, q)
        if long:
            e = _residuals(z, ar, ma, start)
            val = float(e @ e)
        else:
            val = _css(zl, ar, ma, start)
        return val if math.isfinite(val) else 1e300

    x0 = _start_values(np.asarray(z, dtype=float), p, q, start)
    css0 = css_of(x0)
    res = minimize(
        css_of,
        x0,
        method="Nelder-Mead",
        options={"xatol": 1e-3, "fatol": 1e-7 * max(css0, floor * n_eff), "maxiter": 400 * (p + q), "maxfev": 600 * (p + q)},
    )
    ar, ma = _unpack(res.x, p, q)
    return np.array(ar), np.array(ma), float(res.fun), bool(res.success)


def _roots(coefs) -> np.ndarray:
    """Roots of ``1 + c_1 z + ... + c_k z^k``; negligible high-order terms are
    dropped (their roots lie far outside the unit circle)."""
    poly = np.concatenate([[1.0], np.asarray(coefs, dtype=float)])
    keep = np.flatnonzero(np.abs(poly) > 1e-12)
    poly = poly[: keep[-1] + 1]
    if poly.size < 2:
        return np.zeros(0, dtype=complex)
    return np.roots(poly[::-1])


def min_root_modulus(ar, ma) -> float:
    """Smallest root modulus of the AR and MA polynomials (inf if none)."""
    out = math.inf
    for r in (_roots(-np.asarray(ar, dtype=float)), _roots(ma)):
        if r.size:
            out = min(out, float(np.abs(r).min()))
    return out


def has_common_factor(ar, ma, tol: float = COMMON_ROOT_TOL) -> bool:
    """True when an AR and an MA inverse root nearly coincide (the ARMA
    model is then a redundant parametrisation of a lower order)."""
    ra, rm = _roots(-np.asarray(ar, dtype=float)), _roots(ma)
    if not ra.size or not rm.size:
        return False
    return bool(np.abs(1.0 / ra[:, None] - 1.0 / rm[None, :]).min() < tol)


def _aicc(css, n_eff, k, floor):
    sigma2 = max(css / n_eff, floor)
    loglik = -0.5 * n_eff * (math.log(2.0 * math.pi * sigma2) + 1.0)
    if n_eff - k - 1 <= 0:
        return sigma2, math.inf
    return sigma2, -2.0 * loglik + 2.0 * k + 2.0 * k * (k + 1) / (n_eff - k - 1)


def fit_arima(series, max_p: int = 3, max_q: int = 3, max_d: int = 2) -> ScoreModel:
    """Automatic ARIMA for one score series.

    Parameters
    ----------
    series : array_like, length >= 10
    max_p, max_q, max_d : int
        Grid caps.

    Returns
    -------
    ScoreModel
        The AICc-best converged candidate.  A mean (``d = 0``) or drift
        (``d = 1``) term is always included for ``d <= 1``.  When no
        candidate converges the random walk with drift is returned with
        ``converged=False``.
    """
    y = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("score series contains non-finite values")
    if y.size < 10:
        raise ValueError(f"ARIMA needs at least 10 observations, got {y.size}")
    d = choose_d(y, max_d)
    w = np.diff(y, n=d) if d else y
    include_mean = d <= 1
    mu = float(w.mean()) if include_mean else 0.0
    z = w - mu
    start = min(max_p, max(w.size - 4, 0))
    n_eff = w.size - start
    floor = 1e-12 * max(float(w @ w) / w.size, np.finfo(float).tiny)

    best = None
    table = {}
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            if p > start:
                continue
            try:
                ar, ma, css, ok = _fit_candidate(z, p, q, start, floor)
            except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
                logger.debug("ARIMA(%d,%d,%d) failed: %s", p, d, q, exc)
                continue
            k = p + q + int(include_mean) + 1
            sigma2, aicc = _aicc(css, n_eff, k, floor)
            # near-unit roots (boundary fits) and cancelling AR/MA factors
            # are not eligible
            if min_root_modulus(ar, ma) < ROOT_MARGIN or has_common_factor(ar, ma):
                aicc = math.inf
            table[(p, q)] = (aicc, ok)
            if not ok or not math.isfinite(aicc):
                continue
            if best is None or aicc < best.aicc:
                best = ScoreModel((p, d, q), ar, ma, mu, sigma2, aicc, True)
    if best is None:
        logger.info("no ARIMA candidate converged; using random walk with drift")
        model = rwd_model(y)
        model.candidates = table
        return model
    best.candidates = table
    return best


def rwd_model(series) -> ScoreModel:
    y = np.asarray(series, dtype=float)
    slope = (y[-1] - y[0]) / (y.size - 1) if y.size > 1 else 0.0
    return ScoreModel((0, 1, 0), drift=float(slope), converged=False, method="rwd")


def rwd_forecast(series, h: int) -> np.ndarray:
    """Random walk with drift: ``y_n + j (y_n - y_1) / (n - 1)``, j = 1..h."""
    y = np.asarray(series, dtype=float)
    if y.size < 2:
        raise ValueError("random walk with drift needs at least two observations")
    slope = (y[-1] - y[0]) / (y.size - 1)
    return y[-1] + slope * np.arange(1, h + 1)


def forecast_scores(model: ScoreModel, series, h: int) -> np.ndarray:
    """Point forecasts 1..h steps past the end of ``series`` (future shocks 0)."""
    if h < 1:
        raise ValueError("horizon must be >= 1")
    y = np.asarray(series, dtype=float)
    steps = np.arange(1, h + 1)
    if model.method == "rwd":
        return y[-1] + model.drift * steps
    d = model.d
    if y.size <= d:
        # too short to difference: continue the last value along the drift
        return y[-1] + (model.drift if d == 1 else 0.0) * steps
    w = np.diff(y, n=d) if d else y
    z = w - model.drift
    p, q = model.ar.size, model.ma.size
    if z.size <= p:
        z = np.concatenate([np.zeros(p - z.size + 1), z])
    e = np.zeros(z.size)
    e[p:] = _residuals(z, model.ar, model.ma, p)
    zf = np.concatenate([z, np.zeros(h)])
    ef = np.concatenate([e, np.zeros(h)])
    N = z.size
    for j in range(h):
        t = N + j
        val = 0.0
        for i in range(p):
            val += model.ar[i] * zf[t - i - 1]
        for i in range(q):
            if t - i - 1 >= 0:
                val += model.ma[i] * ef[t - i - 1]
        zf[t] = val
    out = zf[N:] + model.drift
    for k in range(d, 0, -1):
        last = np.diff(y, n=k - 1)[-1] if k > 1 else y[-1]
        out = last + np.cumsum(out)
    return out


def fit_scores(scores: np.ndarray, method: str = "arima", max_p: int = 3, max_q: int = 3,
               max_d: int = 2) -> list[ScoreModel]:
    """One model per score column; short series fall back to RWD."""
    scores = np.atleast_2d(scores)
    models = []
    for k in range(scores.shape[1]):
        col = scores[:, k]
        if method == "rwd" or col.size < 10:
            models.append(rwd_model(col))
            continue
        if method != "arima":
            raise ValueError(f"unknown score method {method!r}")
        try:
            models.append(fit_arima(col, max_p, max_q, max_d))
        except (ValueError, FloatingPointError) as exc:
            logger.warning("score %d: ARIMA failed (%s); using RWD", k, exc)
            models.append(rwd_model(col))
    return models
