"""Dynamic functional principal component analysis.

Components are eigenfunctions of the long-run covariance of the (stacked)
curves.  For a block of ``omega`` series the curves are concatenated, so
each component is a ``d = omega * p`` vector whose ``l``-th segment is the
component function of series ``l``; all series in a block share scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from gfts.lrcov import CurvePanel, LongRunCov, long_run_cov, resolve_bandwidth


class DegenerateModelError(ValueError):
    """No positive long-run variance: the curves do not vary over time."""


def stack(curves: Mapping, block: Sequence) -> CurvePanel:
    """Concatenate the ``n x p`` curves of ``block`` members column-wise.

    Row ``t`` of the result is ``[f_t^(1), ..., f_t^(omega)]`` in block order.
    """
    block = tuple(block)
    if not block:
        raise ValueError("a joint block needs at least one member")
    missing = [m for m in block if m not in curves]
    if missing:
        raise KeyError(f"block members not in panel: {missing}")
    mats = [np.asarray(curves[m], dtype=float) for m in block]
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ValueError("all block members must share (n, p)")
    return CurvePanel(np.hstack(mats), members=block, p=shape[1])


def unstack(values: np.ndarray, members: Sequence, p: int) -> dict:
    """Split ``h x (omega p)`` rows back into per-series ``h x p`` blocks."""
    values = np.atleast_2d(values)
    if values.shape[1] != len(members) * p:
        raise ValueError(f"width {values.shape[1]} != {len(members)} x {p}")
    return {m: values[:, l * p : (l + 1) * p] for l, m in enumerate(members)}


def select_K(eigenvalues, threshold: float = 0.9) -> int:
    """Smallest K whose leading eigenvalues explain ``threshold`` of the
    total over positive eigenvalues."""
    lam = np.asarray(eigenvalues, dtype=float)
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    total = lam[lam > 0].sum()
    if not total > 0:
        raise DegenerateModelError("all eigenvalues are zero")
    ratio = np.cumsum(np.where(lam > 0, lam, 0.0)) / total
    return int(np.flatnonzero(ratio >= threshold - 1e-12)[0]) + 1


@dataclass
class FpcaModel:
    mean: np.ndarray  # (d,)
    eigenvalues: np.ndarray  # (K,)
    components: np.ndarray  # (d, K), Phi^T Phi delta = I
    scores: np.ndarray  # (n, K)
    members: tuple
    p: int
    delta: float = 1.0
    bandwidth: float = 1.0
    all_eigenvalues: np.ndarray = field(default=None, repr=False)
    residuals: np.ndarray = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return self.components.shape[1]

    @property
    def omega(self) -> int:
        return max(len(self.members), 1)

    def segment(self, member) -> tuple[np.ndarray, np.ndarray]:
        """Mean curve and ``p x K`` component functions of one block member."""
        l = self.members.index(member)
        sl = slice(l * self.p, (l + 1) * self.p)
        return self.mean[sl], self.components[sl]

    def to_dict(self) -> dict:
        return {
            "members": [str(m) for m in self.members],
            "p": self.p,
            "delta": self.delta,
            "bandwidth": self.bandwidth,
            "mean": self.mean.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "components": self.components.tolist(),
            "scores": self.scores.tolist(),
        }


def _zero_tolerance(X: np.ndarray) -> float:
    scale = float(np.mean(np.sum(X * X, axis=1)))
    return 1e-13 * max(scale, np.finfo(float).tiny)


def fit_fpca(panel: CurvePanel, lrc: LongRunCov, threshold: float = 0.9, max_K: int = 10) -> FpcaModel:
    """Fit the truncated Karhunen-Loeve model to ``panel``.

    The number of components is :func:`select_K` at ``threshold``, capped by
    ``max_K`` and ``n - 1``.  Components are signed so that their largest
    absolute entry is positive.
    """
    X = panel.values
    n, d = X.shape
    if lrc.matrix.shape != (d, d):
        raise ValueError(f"long-run covariance is {lrc.matrix.shape}, panel width {d}")
    delta = panel.delta
    vals, vecs = lrc.eigenvalues, lrc.eigenvectors
    if vals is None:
        vals, vecs = np.linalg.eigh(lrc.matrix)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
    vals = np.where(vals > _zero_tolerance(X), vals, 0.0)
    if not np.any(vals > 0):
        raise DegenerateModelError("long-run covariance has no positive eigenvalue")
    K = min(select_K(vals, threshold), max_K, max(n - 1, 1), int(np.sum(vals > 0)))

    V = vecs[:, :K].copy()
    idx = np.argmax(np.abs(V), axis=0)
    V *= np.sign(V[idx, np.arange(K)])
    mean = X.mean(axis=0)
    Xc = X - mean
    phi = V / np.sqrt(delta)
    scores = Xc @ phi * delta
    resid = Xc - scores @ phi.T
    return FpcaModel(
        mean=mean,
        eigenvalues=vals[:K] * delta,
        components=phi,
        scores=scores,
        members=tuple(panel.members),
        p=panel.p,
        delta=delta,
        bandwidth=lrc.bandwidth,
        all_eigenvalues=vals * delta,
        residuals=resid,
    )


def fit_block(panel: CurvePanel, kernel: str = "bartlett", bandwidth="plugin",
              threshold: float = 0.9, max_K: int = 10) -> FpcaModel:
    """Bandwidth, long-run covariance and FPCA in one call."""
    v = resolve_bandwidth(panel, bandwidth, kernel)
    return fit_fpca(panel, long_run_cov(panel, v, kernel), threshold, max_K)


def reconstruct(model: FpcaModel, scores) -> np.ndarray:
    """Curves ``mean + scores @ Phi^T`` for an ``h x K`` score matrix."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if scores.shape[1] != model.K:
        raise ValueError(f"expected {model.K} score columns, got {scores.shape[1]}")
    return model.mean + scores @ model.components.T


def reconstruct_series(model: FpcaModel, scores) -> dict:
    """:func:`reconstruct` split into per-series curves."""
    return unstack(reconstruct(model, scores), model.members, model.p)
