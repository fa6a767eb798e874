"""Auxiliary spectral space, the projection pi, and CEM basis functions."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .femops import (
    SPDFactor,
    SolverError,
    backward_converged,
    assemble_stiffness,
    assemble_weighted_mass,
    generalized_eigs_smallest,
    kappa_tilde,
)
from .grid import coarse_element_region, oversample


@dataclass(frozen=True, eq=False)
class AuxiliarySpace:
    """Per-element eigenpairs of ``a_i(phi, v) = lam s_i(phi, v)``.

    ``phi[i]`` holds the first ``J`` eigenvectors of element ``i`` on its
    closed node set ``element_nodes[i]``; ``weighted[i] = S_i @ phi[i]``.
    ``eigenvalues[i]`` has ``J + 1`` entries, the last one being excluded
    from the space.
    """

    grid: object
    num_aux: int
    eigenvalues: np.ndarray  # (N, J+1)
    phi: np.ndarray  # (N, n_loc, J)
    weighted: np.ndarray  # (N, n_loc, J)
    element_nodes: np.ndarray  # (N, n_loc)
    kappa_tilde: np.ndarray

    @property
    def Lambda(self):
        return float(self.eigenvalues[:, self.num_aux].min())

    @property
    def dimension(self):
        return self.phi.shape[0] * self.num_aux

    def local_mass(self, i):
        return assemble_weighted_mass(self.kappa_tilde, coarse_element_region(self.grid, i))

    def element_values(self, v):
        """Gather a global nodal vector into per-element arrays (N, n_loc)."""
        return np.asarray(v)[self.element_nodes]

    def pi_coefficients(self, v):
        """``s_i(v, phi_j^(i))`` for all (i, j); ``v`` global or per-element."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            v = self.element_values(v)
        return np.einsum("enj,en->ej", self.weighted, v)

    def apply_pi(self, v, region=None):
        """Project onto the auxiliary space; result is per-element (N, n_loc).

        With ``region`` given, ``v`` lives on ``region.nodes`` and only the
        coarse elements inside the region contribute (others are zero).
        """
        v = np.asarray(v, dtype=float)
        if region is not None:
            full = np.zeros(self.grid.num_fine_nodes)
            full[region.nodes] = v
            coef = self.pi_coefficients(full)
            inside = np.zeros(len(coef), dtype=bool)
            inside[region.coarse_cells] = True
            coef[~inside] = 0.0
        else:
            coef = self.pi_coefficients(v)
        return np.einsum("enj,ej->en", self.phi, coef)


def build_auxiliary_space(g, m, pou, J):
    if J < 1:
        raise ValueError("number of auxiliary functions must be >= 1")
    kt = kappa_tilde(m, pou)
    lams, phis, ws, nodes = [], [], [], []
    for i in range(g.num_coarse_cells):
        K = coarse_element_region(g, i)
        A = assemble_stiffness(m, K, dirichlet_on_region_boundary=False)
        S = assemble_weighted_mass(kt, K)
        lam, phi = generalized_eigs_smallest(A, S, J + 1)
        lams.append(lam)
        phis.append(phi[:, :J])
        ws.append(S @ phi[:, :J])
        nodes.append(K.nodes)
    return AuxiliarySpace(g, J, np.array(lams), np.array(phis), np.array(ws), np.array(nodes), kt)


def apply_pi(aux, v, region=None):
    return aux.apply_pi(v, region)


def constraint_columns(aux, region):
    """Columns ``S_k phi_j^(k)`` for elements k inside ``region``, on its interior nodes.

    Returns the (n_interior, r) matrix and the (k, j) label of each column.
    """
    idx = region.interior_index
    cells = region.coarse_cells
    U = np.zeros((region.interior_nodes.size, cells.size * aux.num_aux))
    labels = []
    col = 0
    for k in cells:
        local = idx[aux.element_nodes[k]]
        keep = local >= 0
        for j in range(aux.num_aux):
            U[local[keep], col] = aux.weighted[k][keep, j]
            labels.append((int(k), j))
            col += 1
    return U, labels


class CEMOperator:
    """``a(u, v) + s(pi u, pi v)`` on the interior nodes of a region.

    Stored as sparse stiffness plus the low-rank term ``U U^T`` and solved
    with a sparse factorization and the Woodbury identity.
    """

    def __init__(self, aux, m, region):
        self.region = region
        self.A = assemble_stiffness(m, region)
        self.U, self.labels = constraint_columns(aux, region)
        self._factor = SPDFactor(self.A)
        self._AinvU = self._factor._lu.solve(self.U) if self.U.shape[1] else self.U
        cap = np.eye(self.U.shape[1]) + self.U.T @ self._AinvU
        self._cap = sla.cho_factor(cap)
        self._absU = np.abs(self.U)

    def matvec(self, x):
        return self.A @ x + self.U @ (self.U.T @ x)

    def _apply_inverse(self, b):
        y = self._factor._lu.solve(b)
        if self.U.shape[1]:
            y = y - self._AinvU @ sla.cho_solve(self._cap, self.U.T @ y)
        return y

    def _scale(self, x):
        ax = np.abs(x)
        return self._factor.absA @ ax + self._absU @ (self._absU.T @ ax)

    def solve(self, b, rel_tol=1e-12, max_refine=3):
        b = np.asarray(b, dtype=float)
        x = self._apply_inverse(b)
        for _ in range(max_refine):
            res = b - self.matvec(x)
            if backward_converged(res, b, self._scale(x), rel_tol):
                return x
            x = x + self._apply_inverse(res)
        res = b - self.matvec(x)
        if not backward_converged(res, b, self._scale(x), rel_tol):
            bnorm = np.linalg.norm(b, axis=0)
            achieved = float(np.max(np.linalg.norm(res, axis=0) / np.where(bnorm > 0, bnorm, 1.0)))
            raise SolverError(f"CEM solve reached relative residual {achieved:.3e}", achieved)
        return x

    def column(self, k, j):
        return self.U[:, self.labels.index((k, j))]


@dataclass(frozen=True, eq=False)
class BasisFunction:
    """A fine-grid function vanishing outside ``support``.

    ``values`` are nodal values on ``support.interior_nodes``.
    """

    kind: str  # "offline", "online", "global"
    owner: tuple
    support: object
    values: np.ndarray

    def to_global(self):
        out = np.zeros(self.support.grid.num_fine_nodes)
        out[self.support.interior_nodes] = self.values
        return out

    def to_interior(self):
        """Values on the global interior-node numbering used by the solvers."""
        g = self.support.grid
        out = np.zeros(g.interior_nodes.size)
        out[g.interior_index[self.support.interior_nodes]] = self.values
        return out


def _cem_basis_on(aux, m, i, region, kind):
    op = CEMOperator(aux, m, region)
    cols = [op.labels.index((i, j)) for j in range(aux.num_aux)]
    try:
        psi = op.solve(op.U[:, cols])
    except SolverError as exc:
        raise SolverError(f"basis for element {i} on {kind} support failed: {exc}", exc.residual) from exc
    return [BasisFunction(kind, (i, j), region, psi[:, j].copy()) for j in range(aux.num_aux)]


def build_cem_basis(aux, g, m, layers):
    """Offline CEM basis: ``J`` functions per coarse element on its ``layers``-oversampled patch."""
    if layers < 1:
        raise ValueError("oversampling layers must be >= 1")
    basis = []
    for i in range(g.num_coarse_cells):
        region = oversample(g, coarse_element_region(g, i), layers)
        try:
            basis.extend(_cem_basis_on(aux, m, i, region, "offline"))
        except SolverError as exc:
            raise SolverError(f"{exc} (layers={layers})", exc.residual) from exc
    return basis


def local_cem_basis(aux, g, m, i, layers):
    """The ``J`` CEM functions of element ``i`` on its ``layers``-oversampled patch."""
    return _cem_basis_on(aux, m, i, oversample(g, coarse_element_region(g, i), layers), "offline")


def build_global_basis(aux, g, m, i, j=None):
    """Global counterparts of the CEM basis of element ``i`` (oracle; small grids)."""
    funcs = _cem_basis_on(aux, m, i, g.whole(), "global")
    return funcs if j is None else funcs[j]


def energy_norm(A_interior, v):
    return float(np.sqrt(max(v @ (A_interior @ v), 0.0)))
