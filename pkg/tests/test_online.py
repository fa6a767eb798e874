import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from cemgms.driver import OfflineModel
from cemgms.femops import assemble_stiffness
from cemgms.grid import build_hierarchy, vertex_neighborhood
from cemgms.medium import SourceTerm
from cemgms.offline import energy_norm
from cemgms.online import (
    build_online_basis,
    compute_residual,
    global_online_basis,
    local_indicator,
    online_rhs,
    select_regions,
)


@pytest.fixture(scope="module")
def problem(small_medium):
    off = OfflineModel(small_medium.grid, small_medium, num_aux=3, layers=1)
    return off.problem(SourceTerm("f2"))


def test_residual_of_exact_solution_vanishes(problem):
    p = problem
    rho = compute_residual(p.A, p.u_h, p.load).rho
    assert np.linalg.norm(rho) <= 1e-10 * np.linalg.norm(p.load)
    assert np.array_equal(compute_residual(p.A, np.zeros_like(p.load), p.load).rho, -p.load)


def test_residual_galerkin_orthogonal(problem):
    st_ = problem.initial_state()
    rho = compute_residual(problem.A, st_.u_ms, problem.load).rho
    assert np.max(np.abs(st_.space.P.T @ rho)) <= 1e-10 * np.linalg.norm(problem.load)


def test_indicator_zero_cases(problem):
    p = problem
    g = p.grid
    assert local_indicator(g, p.medium, np.zeros(g.interior_nodes.size), 6) == 0
    rho = np.zeros(g.interior_nodes.size)
    far = g.interior_index[vertex_neighborhood(g, 24).interior_nodes]
    rho[far] = 1.0
    assert local_indicator(g, p.medium, rho, 0) == 0


def test_indicator_matches_rayleigh_quotient(problem):
    p = problem
    g = p.grid
    rho = compute_residual(p.A, p.initial_state().u_ms, p.load).rho
    for i in (0, 6, 12, 22):
        r = vertex_neighborhood(g, i)
        z = rho[g.interior_index[r.interior_nodes]]
        A = assemble_stiffness(p.medium, r).toarray()
        # sup_v (z.v)^2 / (v.A v) = largest eigenvalue of (z z^T, A)
        mu = sla.eigh(np.outer(z, z), A, eigvals_only=True)[-1]
        assert local_indicator(g, p.medium, rho, i) == pytest.approx(np.sqrt(mu), rel=1e-8)


def test_select_examples():
    assert list(select_regions([2, 1, 1], 0.5)) == [0]
    assert sorted(select_regions([0.3, 1.0, 0.2, 0.5], 0.0)) == [0, 1, 2, 3]
    assert select_regions([0, 0, 0], 0.3).size == 0
    assert list(select_regions([1.0, 1e-20, 0.5], 0.0)) == [0, 2]
    with pytest.raises(ValueError):
        select_regions([1.0], 1.0)


def tail_ok(d, chosen, theta):
    d = np.asarray(d)
    rest = np.setdiff1d(np.arange(d.size), chosen)
    return np.sum(d[rest] ** 2) < theta * np.sum(d ** 2)


deltas = st.lists(st.floats(0, 1e3, allow_nan=False, allow_subnormal=False), min_size=1, max_size=30)


@given(deltas, st.floats(0.01, 0.99))
def test_select_is_minimal(d, theta):
    d = np.asarray(d)
    chosen = select_regions(d, theta)
    if d.max() == 0:
        assert chosen.size == 0
        return
    dd = np.where(d > 1e-14 * d.max(), d, 0.0)
    assert tail_ok(dd, chosen, theta) or chosen.size == np.count_nonzero(dd)
    if chosen.size:
        assert not tail_ok(dd, chosen[:-1], theta)
        assert np.all(np.diff(dd[chosen]) <= 0)


@given(deltas, st.floats(0, 0.99), st.randoms(use_true_random=False))
def test_select_permutation_invariant(d, theta, rnd):
    d = np.asarray(d)
    perm = np.arange(d.size)
    rnd.shuffle(perm)
    a = select_regions(d, theta)
    b = select_regions(d[perm], theta)
    assert sorted(d[a]) == sorted(d[perm][b])


def test_online_basis_zero_residual(problem):
    p = problem
    rho = np.zeros(p.grid.interior_nodes.size)
    beta = build_online_basis(p.aux, p.grid, p.medium, p.pou, rho, 6, 1)
    assert not np.any(beta.values)


def test_online_basis_full_patch_equals_global(problem):
    p = problem
    rho = compute_residual(p.A, p.initial_state().u_ms, p.load).rho
    for i in (0, 12):
        loc = build_online_basis(p.aux, p.grid, p.medium, p.pou, rho, i, 4)
        glo = global_online_basis(p.aux, p.grid, p.medium, p.pou, rho, i)
        d = loc.to_interior() - glo.to_interior()
        assert energy_norm(p.A, d) <= 1e-10 * energy_norm(p.A, glo.to_interior())


def test_online_basis_defining_equation(problem, rng):
    p = problem
    g = p.grid
    rho = compute_residual(p.A, p.initial_state().u_ms, p.load).rho
    chi = p.pou.chi(7)[g.interior_nodes]
    beta = global_online_basis(p.aux, g, p.medium, p.pou, rho, 7)
    b = beta.to_interior()
    cb = p.aux.pi_coefficients(beta.to_global())
    for _ in range(3):
        v = rng.standard_normal(b.size)
        vg = np.zeros(g.num_fine_nodes)
        vg[g.interior_nodes] = v
        lhs = b @ (p.A @ v) + np.sum(cb * p.aux.pi_coefficients(vg))
        rhs = rho @ (chi * v)  # r(chi_i v)
        assert abs(lhs - rhs) <= 1e-10 * (abs(rhs) + abs(b @ (p.A @ v)))


def test_online_rhs_is_chi_weighted(problem):
    p = problem
    g = p.grid
    r = g.whole()
    rho = np.arange(g.interior_nodes.size, dtype=float)
    rhs = online_rhs(g, p.pou, rho, 6, r)
    assert np.allclose(rhs, p.pou.chi(6)[g.interior_nodes] * rho)


@pytest.mark.parametrize("theta", [0.0, 0.5, 0.9])
def test_enrichment_monotone_and_dof_accounting(problem, theta):
    state = problem.enrich(theta, max_iters=3)
    errs = [r.energy_error_pct for r in state.history]
    assert all(b <= a + 1e-10 for a, b in zip(errs, errs[1:]))
    for prev, cur in zip(state.history, state.history[1:]):
        assert cur.dof - prev.dof == cur.online_added
    for res, cur in zip(state.indicator_history, state.history[1:]):
        assert cur.online_added + cur.dropped == res.selected.size
    assert state.online_counts.sum() == state.history[-1].dof - state.history[0].dof
