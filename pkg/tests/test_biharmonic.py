import numpy as np
import pytest
import scipy.sparse.linalg as spla

from divdivfem import polyalg as pa
from divdivfem.assembly import assemble_hybrid, assemble_mixed, build_global_spaces
from divdivfem.biharmonic import (PiecewiseField, compare_solutions,
                                  convergence_rates, default_case,
                                  error_report, norm_2h,
                                  postprocess_deflection, solve_hybrid,
                                  solve_mixed)
from divdivfem.mesh import structured_unit_square


# -- manufactured case ----------------------------------------------------------


def test_case_derivatives_chain_by_finite_differences(rng):
    case = default_case()
    pts = rng.uniform(0.1, 0.9, (6, 2))
    h = 1e-6
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    for (a, b) in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2),
                   (3, 0), (0, 3), (2, 2), (3, 1), (1, 3)]:
        dx = (case.u_deriv(a, b, pts + ex) - case.u_deriv(a, b, pts - ex)) / (2 * h)
        ref = case.u_deriv(a + 1, b, pts)
        assert np.allclose(dx, ref, atol=1e-4 * max(1.0, np.abs(ref).max()))
        dy = (case.u_deriv(a, b, pts + ey) - case.u_deriv(a, b, pts - ey)) / (2 * h)
        ref = case.u_deriv(a, b + 1, pts)
        assert np.allclose(dy, ref, atol=1e-4 * max(1.0, np.abs(ref).max()))


def test_case_satisfies_clamped_boundary_conditions():
    case = default_case()
    s = np.linspace(0.0, 1.0, 11)
    for pts, normal in [
        (np.stack([s, np.zeros_like(s)], axis=1), np.array([0.0, -1.0])),
        (np.stack([s, np.ones_like(s)], axis=1), np.array([0.0, 1.0])),
        (np.stack([np.zeros_like(s), s], axis=1), np.array([-1.0, 0.0])),
        (np.stack([np.ones_like(s), s], axis=1), np.array([1.0, 0.0])),
    ]:
        assert np.abs(case.u(pts)).max() < 1e-14
        assert np.abs(case.grad_u(pts) @ normal).max() < 1e-13


def test_sign_conventions_are_consistent(rng):
    # the moment tensor is minus the Hessian, and its div-div is the load
    case = default_case()
    pts = rng.uniform(0.1, 0.9, (5, 2))
    assert np.allclose(case.sigma_value(pts), -case.hess_u(pts))
    d = case.u_deriv
    divdiv_sigma = -(d(4, 0, pts) + 2 * d(2, 2, pts) + d(0, 4, pts))
    assert np.allclose(divdiv_sigma, case.f(pts))


# -- solves ------------------------------------------------------------------------


def test_zero_load_gives_zero_solution():
    dm = build_global_spaces(structured_unit_square(2), 3, 3)
    sol = solve_mixed(assemble_mixed(dm, None))
    assert np.abs(sol.sigma).max() == 0.0
    assert np.abs(sol.u).max() == 0.0
    dmh = build_global_spaces(structured_unit_square(2), 3, 3, hybrid=True)
    solh = solve_hybrid(assemble_hybrid(dmh, None))
    assert np.abs(solh.lam).max() == 0.0
    assert np.abs(solh.sigma).max() == 0.0


def test_discrete_consistency_of_solution():
    case = default_case()
    dm = build_global_spaces(structured_unit_square(2), 3, 3)
    system = assemble_mixed(dm, case.f, load_quad_degree=16)
    sol = solve_mixed(system)
    assert sol.residual <= 1e-10
    r1 = system.M @ sol.sigma + system.B.T @ sol.u
    scale = max(np.abs(system.F).max(), 1.0)
    assert np.abs(r1).max() <= 1e-10 * scale
    r2 = system.B @ sol.sigma - system.F
    assert np.abs(r2).max() <= 1e-10 * scale


def test_discrete_exactness_oracle(rng):
    # manufacture discrete data from known coefficients: with u* given and
    # sigma* = -M^{-1} B^T u*, the load B sigma* must reproduce both fields
    dm = build_global_spaces(structured_unit_square(2), 3, 3)
    system = assemble_mixed(dm)
    u_star = rng.normal(size=dm.n_q)
    sigma_star = spla.spsolve(system.M.tocsc(), -system.B.T @ u_star)
    system.F[:] = system.B @ sigma_star
    sol = solve_mixed(system)
    assert np.abs(sol.u - u_star).max() <= 1e-8 * np.abs(u_star).max()
    assert np.abs(sol.sigma - sigma_star).max() <= 1e-8 * max(
        np.abs(sigma_star).max(), 1.0)


def test_hybrid_solution_matches_mixed():
    case = default_case()
    mesh = structured_unit_square(2)
    dm = build_global_spaces(mesh, 3, 3)
    sol = solve_mixed(assemble_mixed(dm, case.f, load_quad_degree=16))
    dmh = build_global_spaces(mesh, 3, 3, hybrid=True)
    solh = solve_hybrid(assemble_hybrid(dmh, case.f, load_quad_degree=16))
    assert solh.n_unknowns == dmh.n_sigma + dmh.n_q + dmh.n_lambda
    dev_s, dev_u = compare_solutions(dm, sol, dmh, solh)
    assert dev_s <= 1e-8
    assert dev_u <= 1e-8


# -- mesh-dependent seminorm ---------------------------------------------------------


def test_norm_2h_of_smooth_function_is_broken_h2(rng):
    case = default_case()
    mesh = structured_unit_square(2)
    field = PiecewiseField.from_smooth(case.u, case.grad_u, case.hess_u)
    val = norm_2h(field, mesh, 16)
    # oracle: integrate the squared Hessian directly, without edge terms
    acc = 0.0
    for t in range(mesh.n_cells):
        pts, w = pa.triangle_quadrature(mesh.cell_coords(t), 16)
        hv = case.hess_u(pts)
        acc += float(np.einsum("qc,qc,c,q->", hv, hv, pa.SYM_METRIC, w))
    assert val == pytest.approx(np.sqrt(acc), rel=1e-10)


def test_norm_2h_of_cell_indicator():
    mesh = structured_unit_square(2)
    t0 = 3
    one = pa.Poly2D(mesh.centroids[t0], 1.0, 0, np.array([1.0]))
    zero = pa.Poly2D(mesh.centroids[t0], 1.0, 0, np.array([0.0]))
    polys = [one if t == t0 else zero for t in range(mesh.n_cells)]
    val = norm_2h(PiecewiseField.from_cell_polys(polys), mesh, 4)
    expected = np.sqrt(sum(mesh.edge_lengths[e] ** -2
                           for e in mesh.cell_edges[t0]))
    assert val == pytest.approx(expected, rel=1e-12)


# -- postprocessing -------------------------------------------------------------------


def test_postprocessing_reproduces_polynomial_deflections(rng):
    # if the moment tensor is exactly -hess p and the deflection moments
    # match p, the local reconstruction returns p itself
    mesh = structured_unit_square(2)
    dm = build_global_spaces(mesh, 3, 3)
    p = pa.Poly2D(np.array([0.5, 0.5]), 1.0, 5, rng.normal(size=pa.n_coeffs(5)))
    sigma_coeffs = dm.interpolate_sigma(
        pa.SymTensorPoly2D(tuple(c * -1.0 for c in pa.hess(p).comps)))
    u_coeffs = dm.project_q(p.value, 12)
    from divdivfem.biharmonic import Solution
    sol = Solution(sigma_coeffs, u_coeffs, None, 0.0, dm.n_sigma + dm.n_q)
    ustar = postprocess_deflection(dm, sol)
    for t in range(mesh.n_cells):
        pts, _ = pa.triangle_quadrature(mesh.cell_coords(t), 6)
        assert np.allclose(ustar[t].value(pts), p.value(pts),
                           atol=1e-9 * max(1, p.coeff_norm()))


def test_postprocessing_of_zero_is_zero():
    dm = build_global_spaces(structured_unit_square(1), 3, 3)
    from divdivfem.biharmonic import Solution
    sol = Solution(np.zeros(dm.n_sigma), np.zeros(dm.n_q), None, 0.0, 0)
    ustar = postprocess_deflection(dm, sol)
    assert all(p.coeff_norm() == 0.0 for p in ustar)


# -- error reporting -----------------------------------------------------------------


def test_error_report_on_interpolated_exact_fields():
    # substituting interpolants of the exact fields gives interpolation-level
    # errors, not solver-level artifacts
    case = default_case()
    mesh = structured_unit_square(4)
    dm = build_global_spaces(mesh, 3, 3)
    sigma_coeffs = dm.interpolate_sigma(case.sigma_field())
    u_coeffs = dm.project_q(case.u, 16)
    from divdivfem.biharmonic import Solution
    sol = Solution(sigma_coeffs, u_coeffs, None, 0.0, dm.n_sigma + dm.n_q)
    row = error_report(dm, sol, case)
    assert row.err_sigma_L2 < 0.6
    assert row.err_Qhu_L2 < 1e-10  # u block is exactly the projection
    assert row.err_u_L2 < 0.05
    assert row.err_ustar_2h is None


def test_galerkin_quasi_optimality():
    # the discrete moment error stays within a modest factor of the
    # interpolation error of the exact moment field
    case = default_case()
    mesh = structured_unit_square(4)
    dm = build_global_spaces(mesh, 3, 3)
    sol = solve_mixed(assemble_mixed(dm, case.f, load_quad_degree=16))
    row = error_report(dm, sol, case)
    sigma_i = dm.interpolate_sigma(case.sigma_field())
    from divdivfem.biharmonic import Solution
    row_i = error_report(dm, Solution(sigma_i, sol.u, None, 0.0, 0), case)
    assert row.err_sigma_L2 <= 10.0 * row_i.err_sigma_L2


def test_convergence_rates_helper():
    from divdivfem.biharmonic import ErrorRow
    rows = [ErrorRow(0.5, 10, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
            ErrorRow(0.25, 40, 1 / 16, 1 / 4, 1 / 4, 1 / 16, 1 / 16, 1 / 16)]
    (h0, h1, rates), = convergence_rates(rows)
    assert rates["err_sigma_L2"] == pytest.approx(4.0)
    assert rates["err_divdiv"] == pytest.approx(2.0)
    rows[1].err_ustar_2h = None
    (_, _, rates), = convergence_rates(rows)
    assert rates["err_ustar_2h"] is None


def test_superconvergent_gap_on_two_levels():
    # the projected-deflection gap converges visibly faster than the plain
    # deflection error already on coarse meshes; the full 1.5-order margin
    # is asserted on the finer family in the acceptance suite
    case = default_case()
    rows = []
    for n in (2, 4):
        dm = build_global_spaces(structured_unit_square(n), 3, 3)
        sol = solve_mixed(assemble_mixed(dm, case.f, load_quad_degree=16))
        rows.append(error_report(dm, sol, case))
    (_, _, rates), = convergence_rates(rows)
    assert rates["err_Qhu_2h"] - rates["err_u_L2"] >= 1.0
