"""Q1 finite element kernels on the fine grid.

Local node order inside a fine cell is (0,0), (1,0), (0,1), (1,1); all
assembly loops run over cells in ascending id so results are reproducible.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .medium import evaluate_source

_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def _stiff_1d(h):
    return np.array([[1.0, -1.0], [-1.0, 1.0]]) / h


def _mass_1d(h):
    return h * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


def q1_stiffness(hx, hy):
    """Element matrix of ``int grad u . grad v`` on an ``hx x hy`` rectangle."""
    return np.kron(_mass_1d(hy), _stiff_1d(hx)) + np.kron(_stiff_1d(hy), _mass_1d(hx))


def q1_mass(hx, hy):
    return np.kron(_mass_1d(hy), _mass_1d(hx))


def cell_node_table(r):
    """(n_cells, 4) positions into ``r.nodes`` of every fine cell's corners."""
    fx, fy = r.fine_shape
    nx = fx + 1
    cx, cy = np.meshgrid(np.arange(fx), np.arange(fy))
    base = (cy * nx + cx).ravel()
    return np.column_stack([base, base + 1, base + nx, base + nx + 1])


def _assemble(cell_weights, element, r, dirichlet):
    table = cell_node_table(r)
    n = r.nodes.size
    rows = np.repeat(table, 4, axis=1).ravel()
    cols = np.tile(table, (1, 4)).ravel()
    vals = (cell_weights[:, None] * element.ravel()[None, :]).ravel()
    M = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    if dirichlet:
        keep = r.interior_local
        M = M[keep][:, keep]
    return M


def assemble_stiffness(m, r, dirichlet_on_region_boundary=True):
    """Stiffness of ``int kappa grad u . grad v`` over region ``r``.

    With the Dirichlet flag the rows and columns of nodes on the region
    boundary are removed, leaving the matrix on ``r.interior_nodes``.
    """
    g = r.grid
    if r.fine_cells.size == 0:
        raise ValueError("empty region")
    return _assemble(m.kappa[r.fine_cells], q1_stiffness(g.hx, g.hy), r, dirichlet_on_region_boundary)


def assemble_weighted_mass(w, r, dirichlet_on_region_boundary=False):
    g = r.grid
    w = np.asarray(w, dtype=float)
    if w.size == g.num_fine_cells:
        w = w[r.fine_cells]
    return _assemble(w, q1_mass(g.hx, g.hy), r, dirichlet_on_region_boundary)


def _hat_table(n_coarse, fine_per_coarse):
    """(n_coarse+1, n_coarse*fine_per_coarse+1) values of the 1D coarse hats at fine nodes."""
    n_fine = n_coarse * fine_per_coarse
    t = np.arange(n_fine + 1) / fine_per_coarse
    return np.clip(1.0 - np.abs(t[None, :] - np.arange(n_coarse + 1)[:, None]), 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Bilinear coarse hats, one per coarse vertex, sampled on the fine grid."""

    grid: object
    hat_x: np.ndarray
    hat_y: np.ndarray
    grad_sum: np.ndarray  # sum_j |grad chi_j|^2 at fine-cell centers

    def vertex_xy(self, i):
        return i % (self.grid.coarse_nx + 1), i // (self.grid.coarse_nx + 1)

    def chi(self, i):
        """Nodal values of chi_i on the whole fine grid."""
        vx, vy = self.vertex_xy(i)
        return np.outer(self.hat_y[vy], self.hat_x[vx]).ravel()

    def chi_on(self, i, r):
        return self.chi(i)[r.nodes]


def build_partition_of_unity(g):
    p = g.fine_per_coarse
    # local coordinate of fine-cell centers inside their coarse cell
    xi = ((np.arange(g.fine_nx) % p) + 0.5) / p
    eta = ((np.arange(g.fine_ny) % p) + 0.5) / p
    gx = 2.0 * ((1 - eta) ** 2 + eta ** 2) / g.Hx ** 2
    gy = 2.0 * ((1 - xi) ** 2 + xi ** 2) / g.Hy ** 2
    grad_sum = (gx[:, None] + gy[None, :]).ravel()
    return PartitionOfUnity(g, _hat_table(g.coarse_nx, p), _hat_table(g.coarse_ny, p), grad_sum)


def kappa_tilde(m, pou):
    if m.grid != pou.grid:
        raise ValueError("medium and partition of unity live on different grids")
    return m.kappa * pou.grad_sum


def assemble_load(f, m, g, full=False):
    """Load vector on interior nodes (all nodes with ``full=True``).

    f1/f2 are integrated with 2x2 Gauss points per cell, so the singular
    point is never evaluated. f3 = -div(kappa grad(xy)) is realised as the
    discrete action of the full stiffness on the nodal interpolant of xy.
    """
    whole = g.whole()
    if f.kind == "f3":
        xy = g.node_coords[:, 0] * g.node_coords[:, 1]
        b = assemble_stiffness(m, whole, dirichlet_on_region_boundary=False) @ xy
    else:
        hx, hy = g.hx, g.hy
        x0 = g.cell_centers[:, 0] - 0.5 * hx
        y0 = g.cell_centers[:, 1] - 0.5 * hy
        contrib = np.zeros((g.num_fine_cells, 4))
        for ty in _GAUSS:
            for tx in _GAUSS:
                shape = np.array([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty])
                if f.kind == "grid":
                    fv = np.asarray(f.values, dtype=float).ravel()
                else:
                    fv = evaluate_source(f, x0 + tx * hx, y0 + ty * hy)
                contrib += (0.25 * hx * hy * fv)[:, None] * shape[None, :]
        table = whole.nodes[cell_node_table(whole)]
        b = np.bincount(table.ravel(), weights=contrib.ravel(), minlength=g.num_fine_nodes)
    return b if full else b[g.interior_nodes]


BACKWARD_TOL = 64 * np.finfo(float).eps


def backward_converged(res, b, scale, rel_tol):
    """Residual test: relative 2-norm below ``rel_tol``, or componentwise
    backward error ``|r| / (|A||x| + |b|)`` at rounding level.

    ``scale`` is ``|A||x|``. The second branch covers systems whose
    conditioning puts ``rel_tol`` below what a double-precision ``x`` can
    represent.
    """
    bnorm = np.linalg.norm(b, axis=0)
    if np.all(np.linalg.norm(res, axis=0) <= rel_tol * bnorm):
        return True
    denom = scale + np.abs(b)
    denom = np.where(denom > 0, denom, 1.0)
    return bool(np.max(np.abs(res) / denom) <= BACKWARD_TOL)


class SPDFactor:
    """Sparse LU factorization with iterative refinement on solve."""

    def __init__(self, A):
        self.A = sp.csc_matrix(A)
        if self.A.shape[0] == 0:
            raise ValueError("empty matrix")
        self.absA = abs(self.A)
        self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A")

    def solve(self, b, rel_tol=1e-12, max_refine=3):
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        for _ in range(max_refine + 1):
            res = b - self.A @ x
            if backward_converged(res, b, self.absA @ np.abs(x), rel_tol):
                return x
            x = x + self._lu.solve(res)
        res = b - self.A @ x
        if backward_converged(res, b, self.absA @ np.abs(x), rel_tol):
            return x
        bnorm = np.linalg.norm(b, axis=0)
        achieved = float(np.max(np.linalg.norm(res, axis=0) / np.where(bnorm > 0, bnorm, 1.0)))
        raise SolverError(f"SPD solve reached relative residual {achieved:.3e} > {rel_tol:.1e}", achieved)


def solve_spd(A, b, rel_tol=1e-12):
    return SPDFactor(A).solve(b, rel_tol=rel_tol)


def generalized_eigs_smallest(A, S, count):
    """The ``count`` smallest eigenpairs of ``A phi = lam S phi`` (dense).

    Eigenvectors are S-orthonormal and signed so their largest-magnitude
    entry is positive.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    S = S.toarray() if sp.issparse(S) else np.asarray(S)
    n = A.shape[0]
    if not 1 <= count <= n:
        raise ValueError(f"count must be in [1, {n}]")
    try:
        lam, phi = sla.eigh(A, S, subset_by_index=[0, count - 1])
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"weight matrix is not positive definite: {exc}") from None
    pivot = np.argmax(np.abs(phi), axis=0)
    phi *= np.sign(phi[pivot, np.arange(count)])
    return lam, phi


def restrict(v, r, interior=False):
    return np.asarray(v)[r.interior_nodes if interior else r.nodes]


def prolong(v, r, interior=False):
    nodes = r.interior_nodes if interior else r.nodes
    v = np.asarray(v)
    if v.shape[0] != nodes.size:
        raise ValueError(f"vector of length {v.shape[0]} does not match region with {nodes.size} nodes")
    out = np.zeros((r.grid.num_fine_nodes,) + v.shape[1:])
    out[nodes] = v
    return out
