"""Residual indicators, theta-based region selection and online basis functions."""
from dataclasses import dataclass, field

import numpy as np

from .femops import SPDFactor, SolverError, assemble_stiffness
from .grid import oversample, vertex_neighborhood
from .offline import BasisFunction, CEMOperator

ZERO_DROP = 1e-14


@dataclass
class ResidualState:
    rho: np.ndarray  # A u_ms - b on global interior nodes
    delta: np.ndarray = None  # one indicator per coarse vertex
    order: np.ndarray = None  # vertex ids sorted by descending delta
    selected: np.ndarray = None

    @property
    def sum_delta_sq(self):
        return float(np.sum(self.delta ** 2))


def compute_residual(A, u_ms, b):
    """Residual functional ``r(v) = a(u_ms, v) - (f, v)`` as a vector on interior nodes."""
    return ResidualState(A @ u_ms - b)


def _interior_slice(g, region, vec):
    return vec[g.interior_index[region.interior_nodes]]


class IndicatorSolver:
    """Cached Dirichlet stiffness factorizations on every coarse neighborhood."""

    def __init__(self, g, m):
        self.grid = g
        self.medium = m
        self._factors = {}

    def factor(self, i):
        if i not in self._factors:
            r = vertex_neighborhood(self.grid, i)
            self._factors[i] = (r, SPDFactor(assemble_stiffness(self.medium, r)))
        return self._factors[i]

    def delta(self, rho, i):
        r, fac = self.factor(i)
        z = _interior_slice(self.grid, r, rho)
        if not np.any(z):
            return 0.0
        try:
            w = fac.solve(z)
        except SolverError as exc:
            raise SolverError(f"indicator solve at vertex {i} failed: {exc}", exc.residual) from exc
        return float(np.sqrt(max(z @ w, 0.0)))

    def all_deltas(self, rho):
        return np.array([self.delta(rho, i) for i in range(self.grid.num_coarse_vertices)])


def local_indicator(g, m, rho, i, solver=None):
    """Dual norm of the residual over functions vanishing outside omega_i."""
    solver = solver or IndicatorSolver(g, m)
    return solver.delta(rho, i)


def select_regions(delta, theta):
    """Smallest leading set of vertices whose complement holds < theta of sum delta^2.

    Vertices are ranked by descending delta, ties by ascending index.
    Indicators at or below ``1e-14 * max(delta)`` count as exact zeros and
    are never selected; theta = 0 therefore selects every nonzero one.
    """
    if not 0 <= theta < 1:
        raise ValueError(f"theta must lie in [0, 1), got {theta!r}")
    delta = np.asarray(delta, dtype=float)
    if delta.size == 0 or delta.max() <= 0:
        return np.array([], dtype=int)
    d = np.where(delta > ZERO_DROP * delta.max(), delta, 0.0)
    order = np.lexsort((np.arange(d.size), -d))
    sq = d[order] ** 2
    total = sq.sum()
    nonzero = int(np.count_nonzero(sq))
    # tail[k] = sum of squares after the first k entries
    tail = total - np.concatenate([[0.0], np.cumsum(sq)])
    k = nonzero
    for cand in range(nonzero):
        if tail[cand] < theta * total:
            k = cand
            break
    return order[:k]


def build_online_basis(aux, g, m, pou, rho, i, layers, operator=None):
    """Online basis on omega_i^+ driven by the chi_i-weighted residual."""
    region = oversample(g, vertex_neighborhood(g, i), layers)
    return _online_on(aux, g, m, pou, rho, i, region, "online", operator)


def global_online_basis(aux, g, m, pou, rho, i, operator=None):
    return _online_on(aux, g, m, pou, rho, i, g.whole(), "global", operator)


def online_rhs(g, pou, rho, i, region):
    """``r_i(v) = r(chi_i v)`` on the region's interior nodes (nodewise product)."""
    chi = pou.chi(i)[region.interior_nodes]
    return chi * _interior_slice(g, region, rho)


def _online_on(aux, g, m, pou, rho, i, region, kind, operator):
    rhs = online_rhs(g, pou, rho, i, region)
    if not np.any(rhs):
        return BasisFunction(kind, (i,), region, np.zeros(region.interior_nodes.size))
    op = operator or CEMOperator(aux, m, region)
    try:
        beta = op.solve(rhs)
    except SolverError as exc:
        raise SolverError(f"online basis at vertex {i} failed: {exc}", exc.residual) from exc
    return BasisFunction(kind, (i,), region, beta)


@dataclass
class EnrichmentState:
    problem: object
    space: object
    u_ms: np.ndarray
    coeffs: np.ndarray
    iteration: int = 0
    history: list = field(default_factory=list)
    indicator_history: list = field(default_factory=list)
    online_counts: np.ndarray = None
    residual: ResidualState = None
    converged: bool = False

    def update_indicators(self):
        p = self.problem
        res = compute_residual(p.A, self.u_ms, p.load)
        res.delta = p.indicators.all_deltas(res.rho)
        res.order = np.lexsort((np.arange(res.delta.size), -res.delta))
        self.residual = res
        if self.history:
            self.history[-1].sum_delta_sq = res.sum_delta_sq
        return res


def enrich_step(state, theta, layers):
    """One pass of residual -> indicators -> selection -> online bases -> re-solve."""
    p = state.problem
    res = state.residual if state.residual is not None else state.update_indicators()
    selected = select_regions(res.delta, theta)
    res.selected = selected
    state.indicator_history.append(res)
    if selected.size == 0:
        state.converged = True
        return state
    new = [build_online_basis(p.aux, p.grid, p.medium, p.pou, res.rho, int(i), layers) for i in selected]
    kept = state.space.add(new)
    for b in kept:
        state.online_counts[b.owner[0]] += 1
    state.coeffs, state.u_ms = p.solve_coarse(state.space)
    state.iteration += 1
    state.residual = None
    state.history.append(p.record(state, online_added=len(kept), dropped=len(new) - len(kept)))
    return state
