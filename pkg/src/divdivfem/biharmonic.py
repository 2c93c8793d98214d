"""Mixed solver for the clamped plate problem and its error machinery.

The continuous problem is the fourth-order equation lap^2 u = -f with
clamped boundary values u = dn u = 0, written in first-order form for the
moment tensor sigma = -hess u and the deflection u.  The discrete solution
solves the saddle system [[M, B^T], [B, 0]] [sigma; u] = [0; F]; the hybrid
variant adds the shear multiplier block.  Error reporting covers the L2
errors, the div-div error, the projected-deflection gap, the mesh-dependent
seminorm with jump penalties, and the locally postprocessed deflection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import polyalg as pa
from .assembly import GlobalDofMap, HybridSystem, MixedSystem
from .mesh import TriMesh

_PI = np.pi


@dataclass
class ManufacturedCase:
    """Smooth exact solution with derivatives up to fourth order.

    ``u_deriv(a, b, pts)`` returns the mixed partial of order (a, b); the
    moment tensor, its first derivatives, and the right-hand side are
    derived fields with the sign conventions sigma = -hess u, f = -lap^2 u.
    """

    name: str
    u_deriv: callable

    def u(self, pts):
        return self.u_deriv(0, 0, pts)

    def grad_u(self, pts):
        return np.stack([self.u_deriv(1, 0, pts), self.u_deriv(0, 1, pts)], axis=-1)

    def hess_u(self, pts):
        return np.stack([self.u_deriv(2, 0, pts), self.u_deriv(1, 1, pts),
                         self.u_deriv(0, 2, pts)], axis=-1)

    def sigma_value(self, pts):
        return -self.hess_u(pts)

    def sigma_grad(self, pts):
        d = self.u_deriv
        g11 = np.stack([-d(3, 0, pts), -d(2, 1, pts)], axis=-1)
        g12 = np.stack([-d(2, 1, pts), -d(1, 2, pts)], axis=-1)
        g22 = np.stack([-d(1, 2, pts), -d(0, 3, pts)], axis=-1)
        return np.stack([g11, g12, g22], axis=1)

    def sigma_field(self) -> pa.TensorField:
        return pa.TensorField(self.sigma_value, self.sigma_grad)

    def f(self, pts):
        d = self.u_deriv
        return -(d(4, 0, pts) + 2.0 * d(2, 2, pts) + d(0, 4, pts))


def _sine_sq(x, d):
    if d == 0:
        return np.sin(_PI * x) ** 2
    if d == 1:
        return _PI * np.sin(2 * _PI * x)
    if d == 2:
        return 2 * _PI**2 * np.cos(2 * _PI * x)
    if d == 3:
        return -4 * _PI**3 * np.sin(2 * _PI * x)
    if d == 4:
        return -8 * _PI**4 * np.cos(2 * _PI * x)
    raise ValueError("derivatives implemented up to order four")


def default_case() -> ManufacturedCase:
    """u = (sin pi x sin pi y)^2 on the unit square; clamped exactly."""

    def u_deriv(a, b, pts):
        pts = np.atleast_2d(pts)
        return _sine_sq(pts[:, 0], a) * _sine_sq(pts[:, 1], b)

    return ManufacturedCase("sine-squared", u_deriv)


@dataclass
class Solution:
    sigma: np.ndarray
    u: np.ndarray
    lam: np.ndarray | None
    residual: float
    n_unknowns: int


def solve_mixed(system: MixedSystem) -> Solution:
    """Direct factorization of the symmetric indefinite saddle matrix."""
    M, B, F = system.M, system.B, system.F
    n_s, n_q = M.shape[0], B.shape[0]
    K = sp.bmat([[M, B.T], [B, None]], format="csc")
    rhs = np.concatenate([np.zeros(n_s), F])
    x = spla.spsolve(K, rhs)
    res = _relative_residual(K, x, rhs)
    if not np.all(np.isfinite(x)):
        raise RuntimeError("factorization failed; singular saddle system "
                           "signals an assembly bug")
    return Solution(x[:n_s], x[n_s:], None, res, n_s + n_q)


def solve_hybrid(system: HybridSystem) -> Solution:
    M, B, C, F = system.M, system.B, system.C, system.F
    n_s, n_q, n_l = M.shape[0], B.shape[0], C.shape[0]
    K = sp.bmat([[M, B.T, C.T], [B, None, None], [C, None, None]], format="csc")
    rhs = np.concatenate([np.zeros(n_s), F, np.zeros(n_l)])
    x = spla.spsolve(K, rhs)
    res = _relative_residual(K, x, rhs)
    if not np.all(np.isfinite(x)):
        raise RuntimeError("factorization failed on the hybrid system")
    return Solution(x[:n_s], x[n_s:n_s + n_q], x[n_s + n_q:], res, n_s + n_q + n_l)


def _relative_residual(K, x, rhs):
    denom = max(np.linalg.norm(rhs), 1e-300)
    return float(np.linalg.norm(K @ x - rhs) / denom)


# -- cellwise fields and the mesh-dependent seminorm ---------------------------


class PiecewiseField:
    """Function given cell by cell through value, gradient, and Hessian
    callables of signature (cell index, points) -> array."""

    def __init__(self, value, grad, hess):
        self.value = value
        self.grad = grad
        self.hess = hess

    @classmethod
    def from_cell_polys(cls, polys) -> "PiecewiseField":
        grads = [pa.grad(p) for p in polys]
        hesss = [pa.hess(p) for p in polys]
        return cls(lambda t, pts: polys[t].value(pts),
                   lambda t, pts: grads[t].value(pts),
                   lambda t, pts: hesss[t].value(pts))

    @classmethod
    def from_smooth(cls, value, grad, hess) -> "PiecewiseField":
        return cls(lambda t, pts: value(pts),
                   lambda t, pts: grad(pts),
                   lambda t, pts: hess(pts))

    def __sub__(self, other: "PiecewiseField") -> "PiecewiseField":
        return PiecewiseField(
            lambda t, pts: self.value(t, pts) - other.value(t, pts),
            lambda t, pts: self.grad(t, pts) - other.grad(t, pts),
            lambda t, pts: self.hess(t, pts) - other.hess(t, pts))


def norm_2h(field: PiecewiseField, mesh: TriMesh, quad_degree: int) -> float:
    """Broken H2 seminorm plus h-weighted jump penalties of values and
    normal derivatives; on boundary edges the jump is the trace itself."""
    acc = 0.0
    for t in range(mesh.n_cells):
        pts, w = pa.triangle_quadrature(mesh.cell_coords(t), quad_degree)
        h = np.asarray(field.hess(t, pts), float)
        acc += float(np.einsum("qc,qc,c,q->", h, h, pa.SYM_METRIC, w))
    for e in range(mesh.n_edges):
        a = mesh.vertices[mesh.edges[e, 0]]
        b = mesh.vertices[mesh.edges[e, 1]]
        pts, w = pa.edge_quadrature(a, b, quad_degree)
        n_e = mesh.edge_normal[e]
        h_e = mesh.edge_lengths[e]
        t0, t1 = mesh.edge_cells[e]
        jump_v = np.asarray(field.value(t0, pts), float)
        jump_dn = np.asarray(field.grad(t0, pts), float) @ n_e
        if t1 >= 0:
            jump_v = jump_v - np.asarray(field.value(t1, pts), float)
            jump_dn = jump_dn - np.asarray(field.grad(t1, pts), float) @ n_e
        acc += float(w @ jump_v**2) / h_e**3
        acc += float(w @ jump_dn**2) / h_e
    return float(np.sqrt(acc))


# -- postprocessing -------------------------------------------------------------


def postprocess_deflection(dofmap: GlobalDofMap, solution: Solution) -> list:
    """Cellwise deflection of degree min(l, k) + 2: Hessian-projects the
    computed moment tensor and pins the affine part to the computed
    deflection's moments against affine functions."""
    l, k = dofmap.l, dofmap.k
    m2 = min(l, k) + 2
    out = []
    for t in range(dofmap.mesh.n_cells):
        verts = dofmap.mesh.cell_coords(t)
        sigma_t = dofmap.sigma_cell_poly(solution.sigma, t)
        u_t = dofmap.q_cell_poly(solution.u, t)
        center, scale = sigma_t.center, sigma_t.scale
        basis = pa.scalar_monomials(m2, center, scale)
        hb = [pa.hess(b) for b in basis]
        n = len(basis)
        pts, w = pa.triangle_quadrature(verts, 2 * m2)
        hvals = np.stack([h.value(pts) for h in hb])              # (n, q, 3)
        H = np.einsum("iqc,jqc,c,q->ij", hvals, hvals, pa.SYM_METRIC, w)
        sv = sigma_t.value(pts)
        rhs1 = -np.einsum("iqc,qc,c,q->i", hvals, sv, pa.SYM_METRIC, w)
        p1 = pa.scalar_monomials(1, center, scale)
        bvals = np.stack([b.value(pts) for b in basis])
        pvals = np.stack([p.value(pts) for p in p1])
        Con = np.einsum("iq,jq,q->ij", bvals, pvals, w)           # (n, 3)
        rhs2 = pvals @ (w * u_t.pad(m2).value(pts))
        A = np.zeros((n + 3, n + 3))
        A[:n, :n] = H
        A[:n, n:] = Con
        A[n:, :n] = Con.T
        rhs = np.concatenate([rhs1, rhs2])
        coef = np.linalg.solve(A, rhs)[:n]
        acc = np.zeros_like(basis[0].coeffs)
        for c, bpoly in zip(coef, basis):
            acc += c * bpoly.coeffs
        out.append(pa.Poly2D(center, scale, m2, acc))
    return out


# -- error reporting -------------------------------------------------------------


ERROR_COLUMNS = ("h", "dofs", "err_sigma_L2", "err_divdiv", "err_u_L2",
                 "err_Qhu_L2", "err_Qhu_2h", "err_ustar_2h")


@dataclass
class ErrorRow:
    h: float
    dofs: int
    err_sigma_L2: float
    err_divdiv: float
    err_u_L2: float
    err_Qhu_L2: float
    err_Qhu_2h: float
    err_ustar_2h: float | None = None

    def values(self):
        vals = [self.h, self.dofs, self.err_sigma_L2, self.err_divdiv,
                self.err_u_L2, self.err_Qhu_L2, self.err_Qhu_2h]
        vals.append("" if self.err_ustar_2h is None else self.err_ustar_2h)
        return vals


def error_report(dofmap: GlobalDofMap, solution: Solution,
                 case: ManufacturedCase, ustar=None,
                 quad_degree: int | None = None) -> ErrorRow:
    """Error norms of a computed solution against the exact fields.

    The quadrature degree defaults to 2(l + 3) + 4, which keeps the
    consistency error of the trigonometric data below the discretization
    error on all tested meshes.
    """
    mesh = dofmap.mesh
    deg = quad_degree or 2 * (dofmap.l + 3) + 4
    e_sigma = e_dd = e_u = 0.0
    for t in range(mesh.n_cells):
        pts, w = pa.triangle_quadrature(mesh.cell_coords(t), deg)
        sig_t = dofmap.sigma_cell_poly(solution.sigma, t)
        diff = case.sigma_value(pts) - sig_t.value(pts)
        e_sigma += float(np.einsum("qc,qc,c,q->", diff, diff, pa.SYM_METRIC, w))
        dd = pa.divdiv(sig_t)
        r = case.f(pts) - dd.value(pts)
        e_dd += float(w @ r**2)
        u_t = dofmap.q_cell_poly(solution.u, t)
        r = case.u(pts) - u_t.value(pts)
        e_u += float(w @ r**2)
    qhu = dofmap.project_q(case.u, deg)
    e_qhu = float(np.linalg.norm(qhu - solution.u))  # orthonormal basis
    gap = PiecewiseField.from_cell_polys(
        [dofmap.q_cell_poly(qhu - solution.u, t) for t in range(mesh.n_cells)])
    e_qhu_2h = norm_2h(gap, mesh, deg)
    e_ustar = None
    if ustar is not None:
        exact = PiecewiseField.from_smooth(case.u, case.grad_u, case.hess_u)
        e_ustar = norm_2h(exact - PiecewiseField.from_cell_polys(ustar), mesh, deg)
    return ErrorRow(mesh.h_max, dofmap.n_sigma + dofmap.n_q,
                    np.sqrt(e_sigma), np.sqrt(e_dd), np.sqrt(e_u),
                    e_qhu, e_qhu_2h, e_ustar)


def convergence_rates(rows: list) -> list:
    """Observed rates between successive rows, column by column."""
    out = []
    names = ERROR_COLUMNS[2:]
    for prev, cur in zip(rows, rows[1:]):
        ratio = np.log(prev.h / cur.h)
        rates = {}
        for name in names:
            a, b = getattr(prev, name), getattr(cur, name)
            if a is None or b is None or a <= 0 or b <= 0:
                rates[name] = None
            else:
                rates[name] = float(np.log(a / b) / ratio)
        out.append((prev.h, cur.h, rates))
    return out


def compare_solutions(dofmap_a: GlobalDofMap, sol_a: Solution,
                      dofmap_b: GlobalDofMap, sol_b: Solution,
                      quad_degree: int | None = None):
    """Relative L2 distances between two discrete (sigma, u) pairs computed
    on the same mesh, e.g. hybrid versus conforming."""
    mesh = dofmap_a.mesh
    deg = quad_degree or 2 * max(dofmap_a.l, dofmap_a.k)
    num_s = num_u = den_s = den_u = 0.0
    for t in range(mesh.n_cells):
        pts, w = pa.triangle_quadrature(mesh.cell_coords(t), deg)
        sa = dofmap_a.sigma_cell_poly(sol_a.sigma, t).value(pts)
        sb = dofmap_b.sigma_cell_poly(sol_b.sigma, t).value(pts)
        num_s += float(np.einsum("qc,qc,c,q->", sa - sb, sa - sb, pa.SYM_METRIC, w))
        den_s += float(np.einsum("qc,qc,c,q->", sa, sa, pa.SYM_METRIC, w))
        ua = dofmap_a.q_cell_poly(sol_a.u, t).value(pts)
        ub = dofmap_b.q_cell_poly(sol_b.u, t).value(pts)
        num_u += float(w @ (ua - ub) ** 2)
        den_u += float(w @ ua**2)
    return (np.sqrt(num_s) / max(np.sqrt(den_s), 1e-300),
            np.sqrt(num_u) / max(np.sqrt(den_u), 1e-300))
