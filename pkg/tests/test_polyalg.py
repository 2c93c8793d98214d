import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from divdivfem import polyalg as pa
from divdivfem.mesh import cross2


def random_poly(rng, degree, center=(0.0, 0.0), scale=1.0):
    return pa.Poly2D(np.asarray(center, float), scale, degree,
                     rng.normal(size=pa.n_coeffs(degree)))


def random_vector(rng, degree, center=(0.0, 0.0), scale=1.0):
    return pa.VectorPoly2D(tuple(random_poly(rng, degree, center, scale)
                                 for _ in range(2)))


def random_tensor(rng, degree, center=(0.0, 0.0), scale=1.0):
    return pa.SymTensorPoly2D(tuple(random_poly(rng, degree, center, scale)
                                    for _ in range(3)))


# -- coefficient algebra --------------------------------------------------------


def test_evaluation_matches_direct_sum(rng):
    p = random_poly(rng, 3, center=(0.2, -0.1), scale=0.5)
    pts = rng.uniform(-1, 1, (7, 2))
    X = (pts - p.center) / p.scale
    exp = pa.exponents(3)
    direct = sum(c * X[:, 0] ** a * X[:, 1] ** b
                 for c, (a, b) in zip(p.coeffs, exp))
    assert np.allclose(p.value(pts), direct, atol=1e-14)


def test_partial_derivative_by_finite_difference(rng):
    p = random_poly(rng, 4, center=(0.3, 0.3), scale=2.0)
    pts = rng.uniform(-0.5, 0.5, (5, 2))
    h = 1e-6
    for i in range(2):
        dp = p.partial(i).value(pts)
        e = np.zeros(2)
        e[i] = h
        fd = (p.value(pts + e) - p.value(pts - e)) / (2 * h)
        assert np.allclose(dp, fd, atol=1e-7 * max(1, np.abs(dp).max()))


@given(st.integers(min_value=0, max_value=3), st.integers(min_value=0, max_value=3),
       st.integers(min_value=0, max_value=10 ** 6))
def test_product_evaluates_pointwise(d1, d2, seed):
    rng = np.random.default_rng(seed)
    p = random_poly(rng, d1)
    q = random_poly(rng, d2)
    pts = rng.uniform(-1, 1, (4, 2))
    assert np.allclose((p * q).value(pts), p.value(pts) * q.value(pts),
                       atol=1e-12)


def test_degree_deficient_derivatives_are_zero():
    p = pa.Poly2D(np.zeros(2), 1.0, 1, np.array([1.0, 2.0, 3.0]))
    h = pa.hess(p)
    assert all(c.coeff_norm() == 0.0 for c in h.comps)
    z = pa.Poly2D.zero(0, np.zeros(2), 1.0)
    assert z.partial(0).degree == 0 and z.partial(0).coeff_norm() == 0.0


# -- differential and multiplication operators ----------------------------------


def test_divdiv_of_xxt_linear_factor(rng):
    # div div((x - c)(x - c)^T q) with q = X_1 scales q by (1+3)(1+2) = 12
    x1 = pa.Poly2D(np.zeros(2), 1.0, 1, np.array([0.0, 1.0, 0.0]))
    dd = pa.divdiv(pa.xxT_mul(x1))
    pts = rng.uniform(-1, 1, (6, 2))
    assert np.allclose(dd.value(pts), 12.0 * x1.value(pts), atol=1e-13)


def test_sym_curl_kills_lowest_order_fields():
    for v in pa.space_basis("RT", 1, (0.4, 0.1), 0.7):
        sc = pa.sym_curl(v)
        assert all(c.coeff_norm() < 1e-15 for c in sc.comps)


def test_scaling_identity_on_homogeneous_polynomials(rng):
    for d in range(7):
        nlow = pa.n_coeffs(d - 1) if d > 0 else 0
        coeffs = np.zeros(pa.n_coeffs(d))
        coeffs[nlow:] = rng.normal(size=pa.n_coeffs(d) - nlow)
        q = pa.Poly2D(np.array([0.2, -0.4]), 1.3, d, coeffs)
        lhs = pa.divdiv(pa.xxT_mul(q))
        rhs = q * float((d + 2) * (d + 3))
        assert (lhs - rhs).coeff_norm() <= 1e-12 * rhs.coeff_norm()


def test_divdiv_after_sym_curl_vanishes(rng):
    for k in range(2, 7):
        v = random_vector(rng, k + 1, center=(0.1, 0.9), scale=1.1)
        dd = pa.divdiv(pa.sym_curl(v))
        assert dd.coeff_norm() <= 1e-12 * max(c.coeff_norm() for c in v.comps)


def test_koszul_square_example(rng):
    one = pa.Poly2D(np.zeros(2), 1.0, 0, np.array([1.0]))
    t = pa.xxT_mul(one)
    pts = rng.uniform(-1, 1, (5, 2))
    vals = t.value(pts)
    assert np.allclose(vals[:, 0], pts[:, 0] ** 2)
    assert np.allclose(vals[:, 1], pts[:, 0] * pts[:, 1])
    assert np.allclose(vals[:, 2], pts[:, 1] ** 2)


def test_multiplication_compositions_vanish(rng):
    q = random_poly(rng, 3, center=(0.5, 0.5))
    v = pa.xperp_mul(pa.xxT_mul(q))
    assert all(c.coeff_norm() < 1e-13 * q.coeff_norm() for c in v.comps)
    t = random_tensor(rng, 3, center=(0.5, 0.5))
    w = pa.pi_RT(pa.xperp_mul(t))
    assert all(c.coeff_norm() < 1e-13 for c in w.comps)


def test_reducers_fix_their_targets(rng):
    center, scale = (0.2, 0.8), 1.4
    for v in pa.space_basis("RT", 1, center, scale):
        pts = np.random.default_rng(1).uniform(0, 1, (4, 2))
        assert np.allclose(pa.pi_RT(v).value(pts), v.value(pts), atol=1e-14)
    p1 = random_poly(np.random.default_rng(2), 1, center, scale)
    pts = np.random.default_rng(3).uniform(0, 1, (4, 2))
    assert np.allclose(pa.pi_1(p1).value(pts), p1.value(pts), atol=1e-14)


def test_sandwich_composition_vanishes(rng):
    v = random_vector(rng, 2, center=(0.3, 0.3))
    s = pa.xtx_sandwich(pa.sym_xperp_outer(v))
    assert s.coeff_norm() < 1e-13 * max(c.coeff_norm() for c in v.comps)


# -- space bases and decompositions ----------------------------------------------


@pytest.mark.parametrize("k,expected", [(3, 27), (4, 39), (5, 53), (6, 69)])
def test_sym_curl_range_dimensions(k, expected):
    basis = pa.space_basis("sym_curl_range", k, (0.0, 0.0), 1.0)
    assert len(basis) == expected == k * k + 5 * k + 3
    assert np.linalg.matrix_rank(pa.stack_coeffs(basis)) == expected


@pytest.mark.parametrize("k", [3, 4, 5])
def test_tensor_space_splits(k):
    C = pa.space_basis("sym_curl_range", k, (0.1, 0.2), 0.8)
    Cp = pa.space_basis("xxt_range", k, (0.1, 0.2), 0.8)
    assert len(Cp) == k * (k - 1) // 2
    total = pa.stack_coeffs(C + Cp)
    assert np.linalg.matrix_rank(total) == 3 * pa.n_coeffs(k)


def test_hessian_xperp_decomposition_rank():
    # tensors of degree k-1 split into Hessians and sym(x-perp outer .)
    for k in (3, 4, 5):
        H = pa.space_basis("hess_range", k + 1, (0.0, 0.0), 1.0)
        S = pa.space_basis("sym_xperp_range", k - 2, (0.0, 0.0), 1.0)
        M = pa.stack_coeffs([t.pad(k - 1) for t in H + S])
        assert np.linalg.matrix_rank(M) == 3 * pa.n_coeffs(k - 1)
        rot = np.stack([pa.rot_tensor(t).pad(k - 2).stacked_coeffs() for t in S])
        s = np.linalg.svd(rot, compute_uv=False)
        assert s[-1] > 1e-8 * s[0]  # bijection onto vectors of degree k-2


def test_unknown_space_tag():
    with pytest.raises(ValueError):
        pa.space_basis("bogus", 3, (0.0, 0.0), 1.0)


def test_split_decomposition_pure_parts(rng):
    v = random_vector(rng, 4, center=(0.2, 0.1))
    t = pa.sym_curl(v).pad(3)
    tc, tp = pa.split_decomposition(t, 3)
    assert all(c.coeff_norm() < 1e-11 * max(1, t.comps[0].coeff_norm())
               for c in tp.comps)
    x1 = pa.Poly2D(np.array([0.2, 0.1]), 1.0, 1, np.array([0.0, 1.0, 0.0]))
    t2 = pa.xxT_mul(x1)
    tc2, tp2 = pa.split_decomposition(t2, 3)
    assert all(c.coeff_norm() < 1e-11 for c in tc2.comps)


def test_split_decomposition_reconstructs(rng):
    t = random_tensor(rng, 3, center=(0.4, 0.4))
    tc, tp = pa.split_decomposition(t, 3)
    err = max(c.coeff_norm() for c in (tc + tp - t.pad(3)).comps)
    assert err <= 1e-10 * max(c.coeff_norm() for c in t.comps)
    # the complement part lies in the span of the x x^T fields
    span = pa.stack_coeffs(pa.space_basis("xxt_range", 3, t.center, t.scale)).T
    rhs = tp.stacked_coeffs()
    sol, *_ = np.linalg.lstsq(span, rhs, rcond=None)
    assert np.linalg.norm(span @ sol - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1)


# -- integration -----------------------------------------------------------------


def unit_monomial_integral(a, b):
    """Closed form on the reference triangle: a! b! / (a + b + 2)!."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def test_constant_integrates_to_area(rng, unit_triangle):
    one = pa.Poly2D(np.zeros(2), 1.0, 0, np.array([1.0]))
    assert pa.integrate_triangle(one, unit_triangle) == pytest.approx(0.5)
    verts = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 1.5]])
    area = 0.5 * abs(cross2(verts[1] - verts[0], verts[2] - verts[0]))
    assert pa.integrate_triangle(one, verts) == pytest.approx(area)


def test_edge_quadratic():
    p = pa.Poly2D(np.zeros(2), 1.0, 2, np.array([0, 0, 0, 1.0, 0, 0]))  # X^2
    val = pa.integrate_edge(p, (0.0, 0.0), (1.0, 0.0))
    assert val == pytest.approx(1.0 / 3.0)


def test_cubic_cross_monomial_closed_form(unit_triangle):
    coeffs = np.zeros(pa.n_coeffs(6))
    coeffs[[tuple(e) for e in pa.exponents(6)].index((3, 3))] = 1.0
    p = pa.Poly2D(np.zeros(2), 1.0, 6, coeffs)
    assert pa.integrate_triangle(p, unit_triangle) == pytest.approx(
        unit_monomial_integral(3, 3))
    assert unit_monomial_integral(3, 3) == pytest.approx(1.0 / 1120.0)


@given(st.integers(min_value=0, max_value=6), st.integers(min_value=0, max_value=6))
def test_monomials_match_closed_form(a, b):
    coeffs = np.zeros(pa.n_coeffs(a + b))
    coeffs[[tuple(e) for e in pa.exponents(a + b)].index((a, b))] = 1.0
    p = pa.Poly2D(np.zeros(2), 1.0, a + b, coeffs)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert pa.integrate_triangle(p, verts) == pytest.approx(
        unit_monomial_integral(a, b), rel=1e-13)


def test_callable_integration_needs_degree(unit_triangle):
    with pytest.raises(ValueError):
        pa.integrate_triangle(lambda pts: pts[:, 0], unit_triangle)
    val = pa.integrate_triangle(lambda pts: pts[:, 0], unit_triangle, degree=2)
    assert val == pytest.approx(unit_monomial_integral(1, 0))


def test_orthonormal_cell_basis_gram(rng):
    verts = np.array([[0.1, 0.0], [1.3, 0.2], [0.4, 1.1]])
    basis = pa.orthonormal_cell_basis(3, verts)
    G = pa.gram_matrix(basis, verts)
    assert np.allclose(G, np.eye(len(basis)), atol=1e-11)


def test_orthonormal_legendre_on_edge():
    xi, w = pa.gauss_pm1(8)
    length = 0.731
    L = pa.orthonormal_legendre(xi, 5, length)
    G = np.einsum("iq,jq,q->ij", L, L, 0.5 * length * w)
    assert np.allclose(G, np.eye(5), atol=1e-13)


# -- trace identities and the integration-by-parts identity ----------------------


def test_greens_identity_on_random_triangles(rng):
    for _ in range(5):
        verts = rng.uniform(0, 1, (3, 2))
        if cross2(verts[1] - verts[0], verts[2] - verts[0]) < 0:
            verts = verts[[0, 2, 1]]
        if abs(cross2(verts[1] - verts[0], verts[2] - verts[0])) < 0.2:
            continue
        center = verts.mean(axis=0)
        t = random_tensor(rng, 4, center=center)
        v = random_poly(rng, 4, center=center)
        assert pa.greens_identity_residual(t, v, verts) < 1e-12


def test_trace_identities_for_sym_curl_fields(rng):
    # with tau = sym curl v: n' tau n is the tangential derivative of n . v,
    # and the effective shear is the second tangential derivative of t . v
    v = random_vector(rng, 4, center=(0.5, 0.5))
    t = pa.sym_curl(v)
    for theta in (0.3, 1.2, 2.5):
        tang = np.array([np.cos(theta), np.sin(theta)])
        norm = np.array([tang[1], -tang[0]])
        pts = np.outer(np.linspace(-1, 1, 9), tang) + np.array([0.45, 0.55])
        nn = pa.nn_trace_poly(t, norm)
        dtv = pa.VectorPoly2D(tuple(pa.directional_derivative(c, tang)
                                    for c in v.comps))
        rhs = dtv.comps[0] * norm[0] + dtv.comps[1] * norm[1]
        assert np.allclose(nn.value(pts), rhs.value(pts), atol=1e-12)
        shear = pa.shear_trace_poly(t, norm, tang)
        ttv = dtv.comps[0] * tang[0] + dtv.comps[1] * tang[1]
        rhs2 = pa.directional_derivative(ttv, tang)
        assert np.allclose(shear.value(pts), rhs2.value(pts), atol=1e-12)


def test_rotation_conjugation_identities(rng):
    t = random_tensor(rng, 3, center=(0.5, 0.5))
    pts = rng.uniform(0, 1, (6, 2))
    # rot rot tau equals div div of the conjugated tensor
    lhs = pa.rotrot(t).value(pts)
    rhs = pa.divdiv(pa.conjugate_tensor(t)).value(pts)
    assert np.allclose(lhs, rhs, atol=1e-11)
    # def v equals the conjugate of sym curl of the rotated vector
    v = random_vector(rng, 3, center=(0.5, 0.5))
    lhs = pa.def_vec(v).value(pts)
    rhs = pa.conjugate_tensor(pa.sym_curl(pa.rotate_vector_cw(v))).value(pts)
    assert np.allclose(lhs, rhs, atol=1e-11)
    # curl curl of a scalar is the conjugated Hessian
    p = random_poly(rng, 4, center=(0.5, 0.5))
    lhs = pa.curlcurl_scalar(p).value(pts)
    rhs = pa.conjugate_tensor(pa.hess(p)).value(pts)
    assert np.allclose(lhs, rhs, atol=1e-11)
