"""Group structures, exposure-weighted summing matrices and forecast reconciliation.

Rates aggregate through exposure shares: for a node ``v`` with bottom
descendants ``c``,

    R_v = sum_c (E_c / E_v) R_c,     E_v = sum_c E_c,

so ``R = S b`` with ``S`` built from exposures of one year.  Exposures are
age-specific, so by default ``S`` is a stack of ``p`` matrices.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from gfts.panel import JAPAN_LAYOUT, MortalityPanel, SeriesId, layout_areas

logger = logging.getLogger(__name__)

LEVELS = ("national", "sex", "region", "region+sex", "prefecture", "prefecture+sex")
TAGS = ("geo-only", "hierarchy1", "hierarchy2")
RECONCILE_METHODS = ("base", "bu", "ols", "mint")
RATE_FLOOR = 1e-7


class StructureError(ValueError):
    """Malformed group structure."""


class ReconcileError(ValueError):
    """Reconciliation cannot proceed (rank deficiency, non-PD weights, ...)."""


@dataclass(frozen=True)
class GroupStructure:
    """All nodes of a grouped hierarchy in canonical row order.

    ``members[v]`` lists the bottom descendants of ``v`` in bottom order and
    ``block[v]`` labels the joint-modelling block of ``v``.
    """

    nodes: tuple
    bottom: tuple
    members: dict
    level: dict
    parent: dict
    block: dict
    tag: str = "custom"

    def __post_init__(self):
        self.validate()

    @property
    def N(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.bottom)

    def validate(self) -> None:
        if len(set(self.nodes)) != len(self.nodes):
            raise StructureError("duplicate node ids")
        bottom = set(self.bottom)
        if not bottom or not bottom <= set(self.nodes):
            raise StructureError("bottom series must be a non-empty subset of the nodes")
        for v in self.nodes:
            mem = self.members.get(v)
            if not mem:
                raise StructureError(f"node {v} has no bottom descendants")
            if len(set(mem)) != len(mem) or not set(mem) <= bottom:
                raise StructureError(f"node {v}: members must be distinct bottom series")
            if v in bottom and tuple(mem) != (v,):
                raise StructureError(f"bottom node {v} must be its own only member")
            p = self.parent.get(v)
            if p is not None and (p not in self.members or not set(mem) <= set(self.members[p])):
                raise StructureError(f"node {v} is not nested in its parent {p}")
        by_level: dict = {}
        for v in self.nodes:
            by_level.setdefault(self.level[v], []).append(v)
        for lev, vs in by_level.items():
            seen: list = []
            for v in vs:
                seen.extend(self.members[v])
            if len(seen) != len(set(seen)) or set(seen) != bottom:
                raise StructureError(f"level {lev!r} does not partition the bottom series")
        if not any(set(self.members[v]) == bottom for v in self.nodes):
            raise StructureError("no top node covers every bottom series")

    def levels(self) -> list[str]:
        out: list = []
        for v in self.nodes:
            if self.level[v] not in out:
                out.append(self.level[v])
        return out

    def index_matrix(self) -> np.ndarray:
        """0/1 incidence matrix, nodes x bottom."""
        col = {b: j for j, b in enumerate(self.bottom)}
        A = np.zeros((self.N, self.m))
        for r, v in enumerate(self.nodes):
            A[r, [col[b] for b in self.members[v]]] = 1.0
        return A


def layout_structure(tag: str, layout: Sequence[int] = JAPAN_LAYOUT, top: str = "Japan") -> GroupStructure:
    """``geo-only``, ``hierarchy1`` (area first, then sex) or ``hierarchy2``
    (sex first, then area) over a region/prefecture layout."""
    if tag not in TAGS:
        raise StructureError(f"unknown hierarchy {tag!r}; expected one of {TAGS}")
    regions, region_of = layout_areas(layout)
    prefs = list(region_of)
    in_region = {r: [a for a in prefs if region_of[a] == r] for r in regions}
    sid = SeriesId
    members, level, parent, block = {}, {}, {}, {}
    nodes: list = []

    def add(v, lev, par, mem, blk):
        nodes.append(v)
        level[v], parent[v], members[v], block[v] = lev, par, tuple(mem), blk

    if tag == "geo-only":
        bottom = [sid(a, "T") for a in prefs]
        add(sid(top, "T"), "national", None, bottom, "national")
        for r in regions:
            add(sid(r, "T"), "region", sid(top, "T"), [sid(a, "T") for a in in_region[r]], "regions")
        for a in prefs:
            add(sid(a, "T"), "prefecture", sid(region_of[a], "T"), [sid(a, "T")], f"{region_of[a]}:T")
        return GroupStructure(tuple(nodes), tuple(bottom), members, level, parent, block, tag)

    bottom = [sid(a, s) for a in prefs for s in ("F", "M")]
    h1 = tag == "hierarchy1"
    T = sid(top, "T")
    add(T, "national", None, bottom, "national")
    for s in ("F", "M"):
        add(sid(top, s), "sex", T, [b for b in bottom if b.sex == s], f"{top}:FM")
    for r in regions:
        add(sid(r, "T"), "region", T, [b for b in bottom if region_of[b.area] == r], "regions")
    if h1:
        order = [(r, s) for r in regions for s in ("F", "M")]
    else:
        order = [(r, s) for s in ("F", "M") for r in regions]
    for r, s in order:
        mem = [b for b in bottom if region_of[b.area] == r and b.sex == s]
        add(sid(r, s), "region+sex", sid(r, "T") if h1 else sid(top, s), mem, f"{r}:FM" if h1 else f"regions:{s}")
    for a in prefs:
        add(sid(a, "T"), "prefecture", sid(region_of[a], "T"), [sid(a, "F"), sid(a, "M")], f"{region_of[a]}:T")
    for b in bottom:
        r = region_of[b.area]
        add(b, "prefecture+sex", sid(b.area, "T") if h1 else sid(r, b.sex), [b], f"{b.area}:FM" if h1 else f"{r}:{b.sex}")
    return GroupStructure(tuple(nodes), tuple(bottom), members, level, parent, block, tag)


def single_structure(series: SeriesId) -> GroupStructure:
    """Trivial one-node structure."""
    return GroupStructure((series,), (series,), {series: (series,)}, {series: "national"},
                          {series: None}, {series: str(series)}, "single")


# ---------------------------------------------------------------------------
# structure files: node,level,parent,members,block


def write_structure(structure: GroupStructure, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "level", "parent", "members", "block"])
        for v in structure.nodes:
            par = structure.parent.get(v)
            w.writerow([str(v), structure.level[v], "" if par is None else str(par),
                        ";".join(str(b) for b in structure.members[v]), structure.block[v]])


def read_structure(path, tag: str | None = None) -> GroupStructure:
    """Parse a structure file; the bottom series are the nodes whose only
    member is themselves, in file order."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"structure file not found: {path}")
    nodes, members, level, parent, block = [], {}, {}, {}, {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["node", "level", "parent", "members", "block"]:
            raise StructureError(f"{path}: header must be node,level,parent,members,block")
        for k, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 5:
                raise StructureError(f"{path}:{k}: expected 5 fields, got {len(row)}")
            try:
                v = SeriesId.parse(row[0])
                mem = tuple(SeriesId.parse(t) for t in row[3].split(";") if t)
                par = SeriesId.parse(row[2]) if row[2] else None
            except ValueError as exc:
                raise StructureError(f"{path}:{k}: {exc}") from None
            if v in members:
                raise StructureError(f"{path}:{k}: duplicate node {v}")
            nodes.append(v)
            members[v], level[v], parent[v], block[v] = mem, row[1], par, row[4] or str(v)
    bottom = tuple(v for v in nodes if members[v] == (v,))
    return GroupStructure(tuple(nodes), bottom, members, level, parent, block, tag or path.stem)


def load_fixture(name: str) -> GroupStructure:
    """Bundled Japanese structures: ``hierarchy1``, ``hierarchy2``, ``geo-only``."""
    if name not in TAGS:
        raise StructureError(f"unknown fixture {name!r}; expected one of {TAGS}")
    ref = resources.files("gfts") / "data" / f"{name}.csv"
    with resources.as_file(ref) as p:
        return read_structure(p, tag=name)


def resolve_structure(spec: str, layout: Sequence[int] | None = None, top: str = "Japan") -> GroupStructure:
    """A fixture name (built over ``layout`` when given) or a structure file path."""
    if spec in TAGS:
        return layout_structure(spec, layout, top) if layout is not None else load_fixture(spec)
    return read_structure(spec)


def joint_blocks(structure: GroupStructure, method: str = "dmfts") -> list[tuple]:
    """Series blocks for base forecasting: singletons for ``dfts``, the
    structure's block labels for ``dmfts``; both in node order."""
    if method == "dfts":
        return [(v,) for v in structure.nodes]
    if method != "dmfts":
        raise ValueError(f"unknown forecasting method {method!r}")
    groups: dict = {}
    for v in structure.nodes:
        groups.setdefault(structure.block[v], []).append(v)
    return [tuple(g) for g in groups.values()]


# ---------------------------------------------------------------------------
# summing matrix


@dataclass
class SummingMatrix:
    S: np.ndarray  # (p, N, m) per age, or (N, m) pooled
    nodes: tuple
    bottom: tuple
    year: int | None = None

    @property
    def per_age(self) -> bool:
        return self.S.ndim == 3

    def at(self, i: int) -> np.ndarray:
        return self.S[i] if self.per_age else self.S


def _bottom_exposure(panel, structure, year) -> np.ndarray:
    """``m x p`` exposures of the bottom series in ``year``."""
    if isinstance(panel, MortalityPanel):
        idx = np.flatnonzero(panel.years == year)
        if idx.size != 1:
            raise ReconcileError(f"year {year} not in panel")
        return np.array([panel[b].exposure[idx[0]] for b in structure.bottom])
    return np.array([np.asarray(panel[b], dtype=float) for b in structure.bottom])


def build_summing_matrix(structure: GroupStructure, panel, year: int | None = None,
                         mode: str = "age") -> SummingMatrix:
    """Exposure-share summing matrix.

    Parameters
    ----------
    structure : GroupStructure
    panel : MortalityPanel or mapping
        A panel (exposures taken at ``year``) or ``{bottom id: p-vector}``.
    mode : {"age", "pooled"}
        Per-age matrices (default) or one matrix from all-age exposure totals.
    """
    E = _bottom_exposure(panel, structure, year)  # m x p
    if mode == "pooled":
        E = E.sum(axis=1, keepdims=True)
    elif mode != "age":
        raise ValueError("mode must be 'age' or 'pooled'")
    if not np.all(np.isfinite(E)) or np.any(E < 0):
        raise ReconcileError("bottom exposures must be finite and non-negative")
    A = structure.index_matrix()
    Ev = A @ E  # N x p
    bad = np.argwhere(Ev <= 0)
    if bad.size:
        r, i = bad[0]
        raise ReconcileError(f"zero exposure for node {structure.nodes[r]} at age index {i}")
    S = np.ascontiguousarray(A[None, :, :] * E.T[:, None, :] / Ev.T[:, :, None])  # p x N x m
    bi = [structure.nodes.index(b) for b in structure.bottom]
    S[:, bi, :] = np.eye(structure.m)  # exact identity block
    return SummingMatrix(S if mode == "age" else S[0], structure.nodes, structure.bottom, year)


# ---------------------------------------------------------------------------
# reconciliation on (N or m) x cols x p arrays; columns are horizons or samples


def _per_age(S: SummingMatrix, p: int):
    for i in range(p):
        yield i, S.at(i)


def bottom_up(base_bottom: np.ndarray, S: SummingMatrix) -> np.ndarray:
    """``S b`` for an ``m x c x p`` array of bottom forecasts."""
    b = np.asarray(base_bottom, dtype=float)
    if b.shape[0] != len(S.bottom):
        raise ValueError(f"expected {len(S.bottom)} bottom rows, got {b.shape[0]}")
    if S.per_age:
        # contiguous operands keep the stacked product on BLAS
        return np.transpose(S.S @ np.ascontiguousarray(np.transpose(b, (2, 0, 1))), (1, 2, 0))
    return np.einsum("nm,mcp->ncp", S.S, b)


def _check_nodes(R: np.ndarray, S: SummingMatrix) -> None:
    if R.ndim != 3 or R.shape[0] != len(S.nodes):
        raise ValueError(f"expected {len(S.nodes)} node rows, got {R.shape[0]}")
    if S.per_age and S.S.shape[0] != R.shape[2]:
        raise ValueError(f"summing matrix has {S.S.shape[0]} ages, forecasts {R.shape[2]}")


def _cholesky(W: np.ndarray, i=None):
    W = (W + W.T) / 2.0
    try:
        return cho_factor(W, lower=True, check_finite=True)[0]
    except np.linalg.LinAlgError:
        ridge = 1e-12 * max(float(np.trace(W)) / W.shape[0], np.finfo(float).tiny)
        try:
            return cho_factor(W + ridge * np.eye(W.shape[0]), lower=True)[0]
        except np.linalg.LinAlgError:
            where = "" if i is None else f" at age index {i}"
            raise ReconcileError(f"W is not positive definite{where}; increase the shrinkage") from None


def projection(S: SummingMatrix, method: str = "ols", W=None, p: int | None = None) -> np.ndarray:
    """Per-age ``m x N`` maps ``G`` with reconciled bottoms ``b = G R``.

    ``ols``: ``G = (S^T S)^-1 S^T`` by ``lstsq``.  ``mint``: the GLS map
    ``(S^T W^-1 S)^-1 S^T W^-1``, computed by Cholesky whitening; ``W`` is
    ``N x N`` or a ``p x N x N`` stack.  Returns a ``p x m x N`` array.
    """
    N = len(S.nodes)
    if p is None:
        p = S.S.shape[0] if S.per_age else (np.asarray(W).shape[0] if W is not None and np.ndim(W) == 3 else 1)
    if method == "mint":
        if W is None:
            raise ReconcileError("MinT needs a weight matrix W")
        W = np.asarray(W, dtype=float)
        if W.shape[-2:] != (N, N) or (W.ndim == 3 and W.shape[0] != p):
            raise ValueError("W and the base forecasts must match the structure")
        L = None if W.ndim == 3 else _cholesky(W)
    elif method != "ols":
        raise ValueError(f"no projection for method {method!r}")
    G = np.empty((p, len(S.bottom), N))
    eye = np.eye(N)
    for i, Si in _per_age(S, p):
        if method == "ols":
            A, rhs = Si, eye
        else:
            Li = _cholesky(W[i], i) if W.ndim == 3 else L
            A = solve_triangular(Li, Si, lower=True)
            rhs = solve_triangular(Li, eye, lower=True)
        sol, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
        if rank < Si.shape[1]:
            raise ReconcileError(f"summing matrix is rank deficient at age index {i}")
        G[i] = sol
    return G


def apply_projection(G: np.ndarray, S: SummingMatrix, base_all: np.ndarray, return_bottom: bool = False):
    """``S G R`` for an ``N x c x p`` array, with maps from :func:`projection`."""
    R = np.asarray(base_all, dtype=float)
    _check_nodes(R, S)
    bt = G @ np.ascontiguousarray(np.transpose(R, (2, 0, 1)))  # p x m x c
    out = bottom_up(np.transpose(bt, (1, 2, 0)), S)
    return (out, np.transpose(bt, (1, 2, 0))) if return_bottom else out


def ols_reconcile(base_all: np.ndarray, S: SummingMatrix, return_bottom: bool = False):
    """Least-squares projection ``S (S^T S)^-1 S^T R``."""
    R = np.asarray(base_all, dtype=float)
    _check_nodes(R, S)
    return apply_projection(projection(S, "ols", p=R.shape[2]), S, R, return_bottom)


def mint_reconcile(base_all: np.ndarray, S: SummingMatrix, W, return_bottom: bool = False):
    """GLS projection ``S (S^T W^-1 S)^-1 S^T W^-1 R`` by Cholesky whitening.

    ``W`` is one ``N x N`` matrix or a ``p x N x N`` stack (one per age).
    """
    R = np.asarray(base_all, dtype=float)
    _check_nodes(R, S)
    return apply_projection(projection(S, "mint", W, p=R.shape[2]), S, R, return_bottom)


def shrinkage_intensity(errors: np.ndarray) -> float:
    """Shrinkage intensity toward the diagonal from standardised errors,
    ``sum Var(r_ij) / sum r_ij^2`` over ``i != j``, clamped to [0, 1]."""
    X = np.asarray(errors, dtype=float)
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    sd = np.sqrt((Xc**2).mean(axis=0))
    ok = sd > 0
    Z = np.zeros_like(Xc)
    Z[:, ok] = Xc[:, ok] / sd[ok]
    r = Z.T @ Z / n
    v = (Z**2).T @ (Z**2) - (Z.T @ Z) ** 2 / n
    v /= n * (n - 1)
    off = ~np.eye(X.shape[1], dtype=bool)
    den = float(np.sum(r[off] ** 2))
    if den <= 0:
        return 1.0
    return float(np.clip(np.sum(v[off]) / den, 0.0, 1.0))


def estimate_W(errors, shrink="auto") -> np.ndarray:
    """Shrunk covariance ``lambda diag(W_hat) + (1 - lambda) W_hat``.

    ``errors`` is ``samples x nodes``; ``W_hat`` divides by the sample count.
    Zero-variance nodes get a tiny positive variance so that W stays PD.
    """
    X = np.asarray(errors, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("estimate_W needs at least 2 error samples")
    Xc = X - X.mean(axis=0)
    W = Xc.T @ Xc / X.shape[0]
    lam = shrinkage_intensity(X) if shrink == "auto" else float(shrink)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("shrinkage must lie in [0, 1] or be 'auto'")
    out = (1.0 - lam) * W
    d = np.diag(W).copy()
    floor = 1e-12 * max(float(d.max()), np.finfo(float).tiny) if d.size else 0.0
    out[np.diag_indices_from(out)] = np.maximum(d, floor)
    return out


# ---------------------------------------------------------------------------
# dictionary front end (log-scale forecasts, rate-scale reconciliation)


def to_rate_array(forecasts: Mapping, ids: Sequence) -> np.ndarray:
    """Stack log-scale ``c x p`` forecasts into an ``len(ids) x c x p`` rate array."""
    return np.exp(np.stack([np.asarray(forecasts[v], dtype=float) for v in ids]))


def from_rate_array(R: np.ndarray, ids: Sequence, floor: float = RATE_FLOOR) -> dict:
    return {v: np.log(np.maximum(R[r], floor)) for r, v in enumerate(ids)}


def reconcile(method: str, forecasts: Mapping, structure: GroupStructure, S: SummingMatrix, W=None,
              G: np.ndarray | None = None) -> dict:
    """Reconcile log-scale forecasts ``{node: c x p}``; returns the same shape.

    Rates are reconciled and logged back with a ``1e-7`` floor.  ``G`` is an
    optional precomputed :func:`projection` for ``ols`` or ``mint``.
    """
    if method == "base":
        return {v: np.asarray(forecasts[v]) for v in structure.nodes}
    if method == "bu":
        R = bottom_up(to_rate_array(forecasts, structure.bottom), S)
    elif method in ("ols", "mint"):
        R = to_rate_array(forecasts, structure.nodes)
        if G is None:
            if method == "mint" and W is None:
                raise ReconcileError("MinT needs a weight matrix W")
            G = projection(S, method, W, p=R.shape[2])
        R = apply_projection(G, S, R)
    else:
        raise ValueError(f"unknown reconciliation method {method!r}; expected one of {RECONCILE_METHODS}")
    return from_rate_array(R, structure.nodes)


def coherence_residual(forecasts: Mapping, structure: GroupStructure, S: SummingMatrix) -> float:
    """``max |R - S b|`` on the rate scale, relative to ``max |R|``."""
    R = to_rate_array(forecasts, structure.nodes)
    fitted = bottom_up(to_rate_array(forecasts, structure.bottom), S)
    return float(np.max(np.abs(R - fitted)) / max(np.max(np.abs(R)), np.finfo(float).tiny))


def mint_weights(nodes: Mapping, curves: Mapping, structure: GroupStructure, shrink="auto") -> np.ndarray:
    """Per-age ``W`` from one-step in-sample base errors on the rate scale.

    Errors of different nodes are aligned on their common target years.
    """
    common = None
    for v in structure.nodes:
        ent = nodes[v].errors.get(1)
        if ent is None:
            raise ReconcileError(f"{v}: no one-step in-sample errors for MinT")
        common = set(ent[1]) if common is None else common & set(ent[1])
    years = sorted(common)
    if len(years) < 2:
        raise ReconcileError("fewer than two common in-sample error years for MinT")
    cols = []
    for v in structure.nodes:
        E, targets = nodes[v].errors[1]
        pos = {t: z for z, t in enumerate(targets)}
        rows = [pos[t] for t in years]
        f = np.asarray(curves[v], dtype=float)[years]
        e = E[rows]
        cols.append(np.exp(f) - np.exp(f - e))  # years x p, actual - forecast rate
    X = np.stack(cols, axis=1)  # years x N x p
    return np.stack([estimate_W(X[:, :, i], shrink) for i in range(X.shape[2])])
