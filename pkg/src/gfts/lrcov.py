"""Kernel long-run covariance estimation for (stacked) functional time series.

Curves are discretised on a common grid, so every covariance function is a
``d x d`` matrix.  The estimator is the kernel sandwich

    C_hat = sum_l W(l / v) gamma_hat_l,

with lag-``l`` autocovariances that divide by ``n`` for every lag.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurvePanel:
    """``n x d`` matrix of curves; ``delta`` is the grid spacing used in integrals.

    For a stacked block ``members`` lists the series in column order and
    ``p`` is the number of grid points per series (``d = len(members) * p``).
    """

    values: np.ndarray
    delta: float = 1.0
    members: tuple = ()
    p: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("curve panel must be a 2-D array (n x d)")
        if not np.all(np.isfinite(values)):
            raise ValueError("curve panel contains missing or non-finite values")
        object.__setattr__(self, "values", values)
        if self.p is None:
            object.__setattr__(self, "p", values.shape[1] // max(len(self.members), 1))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def omega(self) -> int:
        return max(len(self.members), 1)


class Kernel(NamedTuple):
    weight: Callable[[np.ndarray], np.ndarray]
    q: int  # characteristic exponent
    omega_q: float  # lim |u|^-q (1 - W(u))
    l2: float  # int W(u)^2 du over the unit support


def _bartlett(u):
    return np.clip(1.0 - np.abs(u), 0.0, None)


def _flattop(u):
    a = np.abs(u)
    return np.where(a <= 0.5, 1.0, np.where(a <= 1.0, 2.0 * (1.0 - a), 0.0))


KERNELS = {
    "bartlett": Kernel(_bartlett, 1, 1.0, 2.0 / 3.0),
    # W is flat near 0, so no finite order exists; q = 2 is a nominal plug-in choice
    "flattop": Kernel(_flattop, 2, 1.0, 4.0 / 3.0),
}


def _kernel(name: str) -> Kernel:
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; expected one of {sorted(KERNELS)}") from None


def kernel_weight(u, kernel: str = "bartlett", m: float = 1.0):
    """Weight function with support ``[-m, m]``.

    ``W(0) = 1``, ``W(u) <= 1``, ``W(-u) = W(u)`` and ``W(u) = 0`` for ``|u| > m``.
    """
    if not m > 0:
        raise ValueError("support half-width m must be positive")
    w = _kernel(kernel).weight(np.asarray(u, dtype=float) / m)
    return float(w) if np.ndim(w) == 0 else w


def _as_array(panel) -> np.ndarray:
    return panel.values if isinstance(panel, CurvePanel) else np.asarray(panel, dtype=float)


def autocov(panel, lag: int) -> np.ndarray:
    """Lag-``lag`` autocovariance matrix with divisor ``n``.

    Entry ``[i, j]`` estimates ``Cov(f_t(x_i), f_{t+lag}(x_j))``, so
    ``autocov(X, -l) == autocov(X, l).T``.
    """
    X = _as_array(panel)
    n = X.shape[0]
    if abs(lag) >= n:
        raise ValueError(f"|lag| must be < n = {n}, got {lag}")
    Xc = X - X.mean(axis=0)
    if lag >= 0:
        return Xc[: n - lag].T @ Xc[lag:] / n
    return Xc[-lag:].T @ Xc[: n + lag] / n


def _lag_weights(n: int, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    lags = np.arange(n)
    diff = lags[None, :] - lags[:, None]
    return fn(diff)


def weighted_autocov_sum(X: np.ndarray, lag_weight: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``sum_l c(l) gamma_hat_l`` for lag weights ``c`` over ``|l| < n``.

    Uses ``Xc^T A Xc / n`` with the Toeplitz matrix ``A[t, s] = c(s - t)``.
    """
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    A = _lag_weights(n, lag_weight)
    return Xc.T @ (A @ Xc) / n


@dataclass(frozen=True)
class LongRunCov:
    matrix: np.ndarray
    bandwidth: float
    kernel: str
    eigenvalues: np.ndarray = field(repr=False, default=None)
    eigenvectors: np.ndarray = field(repr=False, default=None)


def plugin_bandwidth(panel, kernel: str = "bartlett", pilot: float | None = None) -> float:
    """Plug-in bandwidth for :func:`long_run_cov`.

    A pilot bandwidth ``n**(1/5)`` gives estimates of ``||C||`` and of the
    order-``q`` term ``||sum |l|^q W(l/v0) gamma_l||``; the bandwidth is then

        v = max(1, (2 q omega_q^2 ||C_q||^2 n / (||W||_2^2 (||C||^2 + tr(C)^2)))^(1/(2q+1)))

    with Frobenius norms.  A constant panel returns 1 with a warning.
    """
    X = _as_array(panel)
    n = X.shape[0]
    if n < 8:
        raise ValueError(f"plug-in bandwidth needs n >= 8 curves, got {n}")
    k = _kernel(kernel)
    v0 = float(n) ** 0.2 if pilot is None else float(pilot)
    C = weighted_autocov_sum(X, lambda l: k.weight(l / v0))
    Cq = weighted_autocov_sum(X, lambda l: np.abs(l) ** k.q * k.weight(l / v0))
    C = (C + C.T) / 2.0
    Cq = (Cq + Cq.T) / 2.0
    aug = float(np.sum(C * C)) + float(np.trace(C)) ** 2
    if not aug > 0:
        warnings.warn("constant panel: plug-in bandwidth set to 1", RuntimeWarning)
        return 1.0
    num = 2.0 * k.q * k.omega_q**2 * float(np.sum(Cq * Cq)) * n
    v = (num / (k.l2 * aug)) ** (1.0 / (2 * k.q + 1))
    return max(1.0, float(v))


def long_run_cov(panel, v: float, kernel: str = "bartlett") -> LongRunCov:
    """Kernel sandwich estimate, symmetrised and projected onto the PSD cone."""
    if not v >= 1:
        raise ValueError(f"bandwidth must be >= 1, got {v}")
    k = _kernel(kernel)
    X = _as_array(panel)
    M = weighted_autocov_sum(X, lambda l: k.weight(l / v))
    M = (M + M.T) / 2.0
    vals, vecs = np.linalg.eigh(M)
    if vals[0] < 0:
        scale = max(float(np.abs(vals).sum()), np.finfo(float).tiny)
        if vals[0] < -1e-8 * scale:
            logger.debug("clipping long-run covariance eigenvalue %.3g", vals[0])
        vals = np.clip(vals, 0.0, None)
        M = (vecs * vals) @ vecs.T
        M = (M + M.T) / 2.0
    order = np.argsort(vals)[::-1]
    return LongRunCov(M, float(v), kernel, vals[order], vecs[:, order])


def resolve_bandwidth(panel, spec: float | str, kernel: str) -> float:
    """``spec`` is ``"plugin"``, ``"fixed:<v>"`` or a number."""
    if isinstance(spec, (int, float)):
        return float(spec)
    if spec == "plugin":
        X = _as_array(panel)
        if X.shape[0] < 8:
            return 1.0
        return plugin_bandwidth(X, kernel)
    if isinstance(spec, str) and spec.startswith("fixed:"):
        return float(spec.split(":", 1)[1])
    raise ValueError(f"bad bandwidth setting {spec!r}")


def lag_support(v: float, kernel: str, n: int) -> Sequence[int]:
    """Lags with positive weight at bandwidth ``v``."""
    lags = np.arange(-(n - 1), n)
    return [int(l) for l in lags if kernel_weight(l / v, kernel) > 0]
