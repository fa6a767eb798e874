import numpy as np
import pytest

from cemgms.femops import assemble_stiffness, build_partition_of_unity
from cemgms.grid import build_hierarchy, coarse_element_region, oversample
from cemgms.medium import Medium, generate_default_medium
from cemgms.offline import (
    CEMOperator,
    apply_pi,
    build_auxiliary_space,
    build_cem_basis,
    build_global_basis,
    energy_norm,
    local_cem_basis,
)


def broken(aux, i, j):
    """phi_j^(i) as a per-element array, zero on every other element."""
    v = np.zeros(aux.element_nodes.shape)
    v[i] = aux.phi[i][:, j]
    return v


def test_uniform_medium_first_eigenpair():
    g = build_hierarchy(3, 3, 4)
    m = Medium(g, np.ones(g.num_fine_cells))
    aux = build_auxiliary_space(g, m, build_partition_of_unity(g), 2)
    assert np.allclose(aux.eigenvalues[:, 0], 0, atol=1e-10)
    for i in range(g.num_coarse_cells):
        assert np.ptp(aux.phi[i][:, 0]) < 1e-10


def test_dimension_and_lambda(small_setup):
    g, m, pou, aux = small_setup
    assert aux.dimension == g.num_coarse_cells * 3
    assert aux.Lambda == min(aux.eigenvalues[i, 3] for i in range(g.num_coarse_cells))
    assert aux.Lambda > 0


def test_s_orthonormality(small_setup):
    g, m, pou, aux = small_setup
    for i in range(g.num_coarse_cells):
        S = aux.local_mass(i)
        assert np.allclose(aux.phi[i].T @ (S @ aux.phi[i]), np.eye(3), atol=1e-10)


def test_pi_reproduces_members(small_setup):
    g, m, pou, aux = small_setup
    for i, j in [(0, 0), (5, 2), (15, 1)]:
        v = broken(aux, i, j)
        assert np.allclose(apply_pi(aux, v), v, atol=1e-12)


def test_pi_kernel_and_idempotency(small_setup, rng):
    g, m, pou, aux = small_setup
    for _ in range(10):
        v = rng.standard_normal(g.num_fine_nodes)
        pv = apply_pi(aux, v)
        ppv = apply_pi(aux, pv)
        assert np.linalg.norm(ppv - pv) <= 1e-12 * np.linalg.norm(pv)
        w = aux.element_values(v) - pv  # S-orthogonal to every phi
        assert np.allclose(apply_pi(aux, w), 0, atol=1e-12 * np.abs(v).max())


def test_pi_on_region_uses_inside_elements_only(small_setup, rng):
    g, m, pou, aux = small_setup
    r = oversample(g, coarse_element_region(g, 5), 1)
    v = rng.standard_normal(r.nodes.size)
    pv = apply_pi(aux, v, region=r)
    outside = np.setdiff1d(np.arange(g.num_coarse_cells), r.coarse_cells)
    assert np.all(pv[outside] == 0)
    full = np.zeros(g.num_fine_nodes)
    full[r.nodes] = v
    assert np.allclose(pv[r.coarse_cells], apply_pi(aux, full)[r.coarse_cells])


def test_cem_operator_spd(small_setup, rng):
    g, m, pou, aux = small_setup
    op = CEMOperator(aux, m, oversample(g, coarse_element_region(g, 6), 1))
    for _ in range(5):
        x = rng.standard_normal(op.A.shape[0])
        assert x @ op.matvec(x) > 0
    B = op.A.toarray() + op.U @ op.U.T
    assert np.allclose(B, B.T)


def global_residual(aux, A, psi, i, j, v):
    """a(psi, v) + s(pi psi, pi v) - s(phi_j^(i), pi v), via per-element s-products."""
    g = aux.grid
    cp = aux.pi_coefficients(psi.to_global())
    vg = np.zeros(g.num_fine_nodes)
    vg[g.interior_nodes] = v
    cv = aux.pi_coefficients(vg)
    return psi.to_interior() @ (A @ v) + np.sum(cp * cv) - cv[i, j]


def test_global_basis_defining_equation(small_setup, rng):
    g, m, pou, aux = small_setup
    A = assemble_stiffness(m, g.whole())
    for i in (0, 9):
        psis = build_global_basis(aux, g, m, i)
        for j, psi in enumerate(psis):
            for _ in range(3):
                v = rng.standard_normal(A.shape[0])
                scale = abs(psi.to_interior() @ (A @ v)) + 1.0
                assert abs(global_residual(aux, A, psi, i, j, v)) <= 1e-10 * scale


def test_full_oversampling_equals_global(small_setup):
    g, m, pou, aux = small_setup
    A = assemble_stiffness(m, g.whole())
    local = build_cem_basis(aux, g, m, layers=4)
    for i in range(g.num_coarse_cells):
        for j, glo in enumerate(build_global_basis(aux, g, m, i)):
            d = glo.to_interior() - local[3 * i + j].to_interior()
            assert energy_norm(A, d) <= 1e-10 * energy_norm(A, glo.to_interior())


def test_single_cell_domain_local_equals_global():
    g = build_hierarchy(1, 1, 6)
    m = Medium(g, np.linspace(1, 5, g.num_fine_cells))
    aux = build_auxiliary_space(g, m, build_partition_of_unity(g), 2)
    loc = build_cem_basis(aux, g, m, 1)
    glo = build_global_basis(aux, g, m, 0)
    for a, b in zip(loc, glo):
        assert np.allclose(a.values, b.values, rtol=1e-12, atol=1e-14)


def test_offline_basis_count_and_support():
    g = build_hierarchy(10, 10, 3)
    m = generate_default_medium(g, 1e4)
    aux = build_auxiliary_space(g, m, build_partition_of_unity(g), 3)
    basis = build_cem_basis(aux, g, m, 2)
    assert len(basis) == 300
    assert all(b.support.shape[0] <= 5 and b.support.shape[1] <= 5 for b in basis)
    assert all(b.support.contains(coarse_element_region(g, b.owner[0])) for b in basis)


def test_layers_must_be_positive(small_setup):
    g, m, pou, aux = small_setup
    with pytest.raises(ValueError):
        build_cem_basis(aux, g, m, 0)


def test_localization_error_decreases_with_layers(default_10x10):
    g, m = default_10x10
    aux = build_auxiliary_space(g, m, build_partition_of_unity(g), 3)
    A = assemble_stiffness(m, g.whole())
    i = 4 * 10 + 6  # element next to both channels
    glo = build_global_basis(aux, g, m, i)
    for j in range(3):
        errs = []
        for layers in (1, 2, 3, 4):
            loc = local_cem_basis(aux, g, m, i, layers)[j]
            errs.append(energy_norm(A, glo[j].to_interior() - loc.to_interior()))
        assert all(b < a for a, b in zip(errs, errs[1:])), errs
