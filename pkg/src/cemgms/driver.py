"""Coarse Galerkin solves, reference solves, error metrics and experiment runs."""
import csv
import logging
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .femops import (
    SPDFactor,
    assemble_load,
    assemble_stiffness,
    assemble_weighted_mass,
    build_partition_of_unity,
)
from .grid import build_hierarchy
from .medium import SourceTerm, generate_default_medium, load_medium, read_cell_field, write_cell_field
from .offline import build_auxiliary_space, build_cem_basis
from .online import EnrichmentState, IndicatorSolver, enrich_step

log = logging.getLogger(__name__)

DEPENDENCE_TOL = 1e-13
RESULTS_HEADER = ["iteration", "dof", "online_added", "l2_error_pct", "energy_error_pct", "sum_delta_sq"]


class DependenceError(np.linalg.LinAlgError):
    pass


class MultiscaleSpace:
    """Span of basis functions as columns of a sparse prolongation ``P``.

    Columns are scaled to unit energy. ``add`` runs a dependence guard: a
    new column whose Cholesky pivot against the kept columns falls below
    ``DEPENDENCE_TOL`` is dropped.
    """

    def __init__(self, A):
        self.A = A
        self.bases = []
        self.P = sp.csc_matrix((A.shape[0], 0))
        self.L = np.zeros((0, 0))
        self.coarse = np.zeros((0, 0))

    @property
    def dof(self):
        return len(self.bases)

    def copy(self):
        new = MultiscaleSpace(self.A)
        new.bases = list(self.bases)
        new.P, new.L, new.coarse = self.P, self.L.copy(), self.coarse.copy()
        return new

    def add(self, bases):
        if not bases:
            return []
        cols = sp.csc_matrix(np.column_stack([b.to_interior() for b in bases]))
        AP = self.A @ cols
        energy = np.sqrt(np.maximum(np.asarray(cols.multiply(AP).sum(axis=0)).ravel(), 0.0))
        scale = np.where(energy > 0, 1.0 / np.where(energy > 0, energy, 1.0), 0.0)
        cols = cols @ sp.diags(scale)
        AP = AP @ sp.diags(scale)
        old_new = (self.P.T @ AP).toarray()
        new_new = (cols.T @ AP).toarray()

        n0 = self.dof
        L, C = self.L, self.coarse
        kept = []
        for j, b in enumerate(bases):
            if energy[j] == 0:
                log.warning("dropping zero basis function %s %s", b.kind, b.owner)
                continue
            c = np.concatenate([old_new[:, j], new_new[kept, j]])
            l = sla.solve_triangular(L, c, lower=True) if c.size else c
            pivot = new_new[j, j] - l @ l
            if pivot < DEPENDENCE_TOL * new_new[j, j]:
                log.warning("dropping nearly dependent basis function %s %s (pivot %.2e)", b.kind, b.owner, pivot)
                continue
            n = L.shape[0]
            L2 = np.zeros((n + 1, n + 1))
            L2[:n, :n] = L
            L2[n, :n] = l
            L2[n, n] = np.sqrt(pivot)
            L = L2
            C2 = np.zeros((n + 1, n + 1))
            C2[:n, :n] = C
            C2[n, :n] = C2[:n, n] = c
            C2[n, n] = new_new[j, j]
            C = C2
            kept.append(j)
        self.L, self.coarse = L, C
        self.P = sp.hstack([self.P, cols[:, kept]], format="csc")
        self.bases.extend(bases[j] for j in kept)
        assert self.P.shape[1] == n0 + len(kept)
        return [bases[j] for j in kept]


def solve_coarse(space, load):
    """Galerkin solve ``(P^T A P) c = P^T b``; returns coefficients and the fine-grid ``u_ms``."""
    if space.dof == 0:
        raise ValueError("empty multiscale space")
    rhs = space.P.T @ load
    c = sla.cho_solve((space.L, True), rhs)
    # refine against the fine-grid residual so P^T(A u - b) is driven to rounding level
    for _ in range(2):
        c = c + sla.cho_solve((space.L, True), rhs - space.P.T @ (space.A @ (space.P @ c)))
    return c, space.P @ c


def galerkin_defect(space, u_ms, load):
    res = space.P.T @ (space.A @ u_ms - load)
    if res.size == 0:
        return 0.0
    bnorm = np.linalg.norm(load)
    return float(np.max(np.abs(res)) / (bnorm if bnorm > 0 else 1.0))


def solve_reference(A, load, rel_tol=1e-12):
    return SPDFactor(A).solve(load, rel_tol=rel_tol)


def compute_errors(u_h, u_ms, A, M):
    """Relative L2 and energy errors in percent."""
    e = u_h - u_ms
    ref_a = u_h @ (A @ u_h)
    ref_m = u_h @ (M @ u_h)
    if ref_a <= 0 or ref_m <= 0:
        raise ZeroDivisionError("reference solution has zero norm; relative error undefined")
    return 100.0 * np.sqrt(max(e @ (M @ e), 0.0) / ref_m), 100.0 * np.sqrt(max(e @ (A @ e), 0.0) / ref_a)


def convergence_rate(history):
    """Largest ratio of consecutive squared energy errors."""
    errs = np.array([rec.energy_error_pct for rec in history], dtype=float)
    if errs.size < 2:
        raise ValueError("need at least two records")
    if np.any(errs[:-1] == 0):
        raise ValueError("zero energy error in history")
    return float(np.max((errs[1:] / errs[:-1]) ** 2))


@dataclass
class ErrorRecord:
    iteration: int
    dof: int
    online_added: int
    l2_error_pct: float
    energy_error_pct: float
    sum_delta_sq: float = float("nan")
    dropped: int = 0
    galerkin_defect: float = float("nan")  # max_p |p^T (A u_ms - b)| / ||b||


class OfflineModel:
    """Everything independent of the source term: grid, medium, spaces, matrices."""

    def __init__(self, grid, medium, num_aux=3, layers=2):
        self.grid, self.medium = grid, medium
        self.num_aux, self.layers = num_aux, layers
        self.pou = build_partition_of_unity(grid)
        self.aux = build_auxiliary_space(grid, medium, self.pou, num_aux)
        whole = grid.whole()
        self.A = assemble_stiffness(medium, whole)
        self.M = assemble_weighted_mass(np.ones(grid.num_fine_cells), whole, dirichlet_on_region_boundary=True)
        self.basis = build_cem_basis(self.aux, grid, medium, layers)
        self.offline_space = MultiscaleSpace(self.A)
        self.offline_space.add(self.basis)
        self.indicators = IndicatorSolver(grid, medium)
        self._factor = None

    def solve_fine(self, load):
        if self._factor is None:
            self._factor = SPDFactor(self.A)
        return self._factor.solve(load)

    def problem(self, source):
        return MultiscaleProblem(self, source)


class MultiscaleProblem:
    """An offline model paired with a source term and its fine reference solution."""

    def __init__(self, offline, source):
        self.offline = offline
        self.source = source
        self.load = assemble_load(source, offline.medium, offline.grid)
        self.u_h = offline.solve_fine(self.load)

    def __getattr__(self, name):
        return getattr(self.offline, name)

    def solve_coarse(self, space):
        return solve_coarse(space, self.load)

    def record(self, state, online_added=0, dropped=0):
        l2, en = compute_errors(self.u_h, state.u_ms, self.A, self.M)
        defect = galerkin_defect(state.space, state.u_ms, self.load)
        return ErrorRecord(state.iteration, state.space.dof, online_added, l2, en,
                           dropped=dropped, galerkin_defect=defect)

    def initial_state(self):
        space = self.offline_space.copy()
        coeffs, u = self.solve_coarse(space)
        state = EnrichmentState(self, space, u, coeffs,
                                online_counts=np.zeros(self.grid.num_coarse_vertices, dtype=int))
        state.history.append(self.record(state))
        return state

    def enrich(self, theta, max_iters, tol_abs=0.0):
        """Run the adaptive loop; stops on max_iters, small residual or empty selection."""
        state = self.initial_state()
        while True:
            res = state.update_indicators()
            if np.sqrt(res.sum_delta_sq) < tol_abs or state.iteration >= max_iters:
                state.indicator_history.append(res)
                break
            enrich_step(state, theta, self.layers)
            if state.converged:
                break
        return state


def build_medium(config, grid):
    if config.medium == "default":
        return generate_default_medium(grid, config.contrast)
    return load_medium(grid, config.medium[len("file:"):])


def build_source(config, grid):
    if config.source in ("f1", "f2", "f3"):
        return SourceTerm(config.source)
    field = read_cell_field(config.source[len("file:"):])
    if field.shape != (grid.fine_ny, grid.fine_nx):
        raise ValueError(f"source grid is {field.shape[1]}x{field.shape[0]}, expected {grid.fine_nx}x{grid.fine_ny}")
    return SourceTerm("grid", field.ravel())


def run_experiment(config, out_dir=None, offline=None, comments=()):
    """Full experiment; writes artifacts when ``out_dir`` (or ``config.out_dir``) is set."""
    stage = "setup"
    try:
        grid = build_hierarchy(config.coarse_nx, config.coarse_ny, config.fine_per_coarse)
        stage = "medium"
        medium = offline.medium if offline is not None else build_medium(config, grid)
        stage = "offline"
        offline = offline or OfflineModel(grid, medium, config.num_aux, config.layers)
        stage = "source"
        problem = offline.problem(build_source(config, grid))
        stage = "online"
        state = problem.enrich(config.theta, config.max_iters, config.tol_abs)
    except Exception as exc:
        raise RuntimeError(f"experiment failed during {stage} stage: {exc}") from exc
    out_dir = out_dir or config.out_dir
    if out_dir:
        write_artifacts(out_dir, config, state, comments)
    return state.history, state


def format_value(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.15g}"


def write_results_csv(path, history, comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for rec in history:
            w.writerow([format_value(getattr(rec, k)) for k in RESULTS_HEADER])


def read_results_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return [
        ErrorRecord(int(r["iteration"]), int(r["dof"]), int(r["online_added"]),
                    float(r["l2_error_pct"]), float(r["energy_error_pct"]), float(r["sum_delta_sq"]))
        for r in rows
    ]


def write_field_csv(path, values, nx, ny):
    values = np.asarray(values, dtype=float).reshape(ny, nx)
    with open(path, "w") as fh:
        fh.write(f"{nx} {ny}\n")
        for row in values:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_field_csv(path):
    with open(path) as fh:
        nx, ny = (int(t) for t in fh.readline().split())
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return data.reshape(ny, nx)


def write_indicator_csv(path, delta, selected):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex", "delta", "selected"])
        for i, (d, s) in enumerate(zip(delta, selected)):
            w.writerow([i, format_value(d), int(s)])


def to_nodal(grid, interior_values):
    out = np.zeros(grid.num_fine_nodes)
    out[grid.interior_nodes] = interior_values
    return out


def save_state(path, state):
    g = state.problem.grid
    np.savez(
        path,
        grid=np.array([g.coarse_nx, g.coarse_ny, g.fine_per_coarse]),
        u_h=to_nodal(g, state.problem.u_h),
        u_ms=to_nodal(g, state.u_ms),
        online_counts=state.online_counts,
        deltas=np.array([r.delta for r in state.indicator_history]),
        selected=np.array([np.isin(np.arange(r.delta.size), r.selected if r.selected is not None else [])
                           for r in state.indicator_history]),
    )


def write_artifacts(out_dir, config, state, comments=()):
    os.makedirs(out_dir, exist_ok=True)
    g = state.problem.grid
    with open(os.path.join(out_dir, "manifest.cfg"), "w") as fh:
        fh.write(config.serialize())
    write_results_csv(os.path.join(out_dir, "results.csv"), state.history, comments)
    save_state(os.path.join(out_dir, "state.npz"), state)
    save_bases(os.path.join(out_dir, "bases.npz"), state.space.bases, g)
    exports = set(config.exports)
    if "fields" in exports:
        export_fields(out_dir, out_dir)
    if "indicators" in exports:
        export_indicators(out_dir, out_dir)
    if "bases" in exports:
        export_bases(out_dir, os.path.join(out_dir, "bases"))


def save_bases(path, bases, grid):
    """Basis functions as columns of a sparse (num_fine_nodes, dof) matrix plus labels."""
    cols = sp.hstack([sp.csc_matrix(b.to_global()[:, None]) for b in bases], format="csc") if bases \
        else sp.csc_matrix((grid.num_fine_nodes, 0))
    labels = np.array([f"{b.kind}_" + "_".join(str(o) for o in b.owner) for b in bases])
    np.savez_compressed(path, data=cols.data, indices=cols.indices, indptr=cols.indptr,
                        shape=np.array(cols.shape), labels=labels)


def export_bases(run_dir, out_dir):
    path = os.path.join(run_dir, "bases.npz")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{run_dir}: no run artifacts (bases.npz missing)")
    st = _load_state(run_dir)
    cnx, cny, p = st["grid"]
    with np.load(path) as z:
        P = sp.csc_matrix((z["data"], z["indices"], z["indptr"]), shape=tuple(z["shape"]))
        labels = z["labels"]
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for n, label in enumerate(labels):
        out = os.path.join(out_dir, f"{n:05d}_{label}.csv")
        write_field_csv(out, P[:, n].toarray().ravel(), cnx * p + 1, cny * p + 1)
        paths.append(out)
    return paths


def _load_state(run_dir):
    path = os.path.join(run_dir, "state.npz")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{run_dir}: no run artifacts (state.npz missing)")
    return np.load(path)


def export_fields(run_dir, out_dir):
    st = _load_state(run_dir)
    cnx, cny, p = st["grid"]
    nx, ny = cnx * p + 1, cny * p + 1
    paths = [os.path.join(out_dir, "u_h.csv"), os.path.join(out_dir, "u_ms.csv")]
    write_field_csv(paths[0], st["u_h"], nx, ny)
    write_field_csv(paths[1], st["u_ms"], nx, ny)
    return paths


def export_indicators(run_dir, out_dir):
    """Per-iteration indicator dumps plus the per-vertex online-basis count map."""
    st = _load_state(run_dir)
    cnx, cny, _ = st["grid"]
    paths = []
    for m, (delta, sel) in enumerate(zip(st["deltas"], st["selected"])):
        path = os.path.join(out_dir, f"indicators_{m:03d}.csv")
        write_indicator_csv(path, delta, sel)
        paths.append(path)
    path = os.path.join(out_dir, "online_counts.csv")
    write_field_csv(path, st["online_counts"], cnx + 1, cny + 1)
    paths.append(path)
    return paths
