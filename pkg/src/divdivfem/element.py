"""Local finite elements on triangles.

Two element families live here.  ``DivDivElement`` carries symmetric tensor
shape functions dual to vertex values, edge moments of the normal-normal
trace, edge moments of the effective transverse shear, and interior moments
against Hessians and sym(x_perp otimes .) fields.  ``HermiteElement`` is the
vector-valued Hermite element used one slot earlier in the discrete sequence.
Both are constructed directly on the physical triangle in a centered, scaled
monomial basis; edge degrees of freedom use the global edge orientation so
that shared functionals are single-valued between neighbouring cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from .mesh import cross2
from .polyalg import (
    Poly2D, SymTensorPoly2D, VectorPoly2D, diff_coeff_matrix, gauss_pm1,
    as_tensor_field, as_vector_field, conjugate_tensor_field,
    conjugate_tensor, divdiv, n_coeffs, monomial_values,
    orthonormal_legendre, rotate_vector_ccw, rotate_vector_field_cw,
    space_basis, stack_coeffs, sym_curl, sym_curl_field,
    triangle_quadrature, rotrot, SYM_METRIC,
)

# local edge i joins vertices (i, i+1 mod 3); with ascending-index global
# orientation the default standalone tangents run 0->1, 1->2, 0<-2
_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))
_DEFAULT_EDGE_DIRS = (1, 1, -1)


@dataclass(frozen=True)
class DofFunctional:
    """One degree of freedom: what it tests, where it sits, which moment."""

    kind: str         # vertex_value | edge_nn | edge_shear | interior_hess |
                      # interior_xperp | hermite_* variants
    entity_dim: int   # 0 vertex, 1 edge, 2 interior
    entity: int       # local vertex or edge index (0 for interior)
    index: int        # tensor component or moment/test index
    sign: int = 1     # tangent alignment of the edge frame used


def divdiv_dof_counts(l: int, k: int) -> dict:
    """Number of degrees of freedom per functional group."""
    if k < 3:
        raise ValueError("need k >= 3")
    if l < k - 1:
        raise ValueError("need l >= k - 1")
    return {
        "vertex": 9,
        "edge_nn": 3 * (l - 1),
        "edge_shear": 3 * l,
        "interior_hess": n_coeffs(k - 2) - 3,
        "interior_xperp": 2 * n_coeffs(l - 2),
    }


def divdiv_dimension(l: int, k: int) -> int:
    return l * l + 5 * l + 3 + k * (k - 1) // 2


class _EdgeFrame:
    """Geometry of one local edge in its global orientation."""

    def __init__(self, a, b, direction):
        if direction > 0:
            self.start, self.end = a, b
        else:
            self.start, self.end = b, a
        vec = self.end - self.start
        self.length = float(np.linalg.norm(vec))
        self.tangent = vec / self.length
        self.normal = np.array([self.tangent[1], -self.tangent[0]])
        self.direction = int(direction)

    def quadrature(self, degree):
        n = max((degree + 2) // 2, 1)
        xi, w = gauss_pm1(n)
        pts = 0.5 * (self.start + self.end) + 0.5 * np.outer(xi, self.end - self.start)
        return xi, pts, 0.5 * self.length * w


class DivDivElement:
    """Symmetric tensor element dual to the trace and moment functionals.

    Parameters
    ----------
    verts : (3, 2) array, counterclockwise
    l, k : trace degree and interior degree, k >= 3 and l >= k - 1; k = l
        gives full tensor polynomials of degree k, l = k - 1 the reduced
        variant
    edge_dirs : three signs giving the global tangent direction of each
        local edge relative to its traversal (i -> i+1); defaults to the
        ascending-local-index convention
    """

    def __init__(self, verts, l: int, k: int, edge_dirs=None):
        verts = np.asarray(verts, float)
        if verts.shape != (3, 2):
            raise ValueError("verts must be a (3, 2) array")
        area2 = float(cross2(verts[1] - verts[0], verts[2] - verts[0]))
        if area2 <= 0:
            raise ValueError("vertices must be in counterclockwise order")
        counts = divdiv_dof_counts(l, k)

        self.verts = verts
        self.l, self.k = l, k
        self.space_degree = max(l, k)
        self.center = verts.mean(axis=0)
        self.scale = float(max(np.linalg.norm(verts[i] - verts[j])
                               for i, j in _LOCAL_EDGES))
        if edge_dirs is None:
            edge_dirs = _DEFAULT_EDGE_DIRS
        self.edges = [_EdgeFrame(verts[i], verts[j], d)
                      for (i, j), d in zip(_LOCAL_EDGES, edge_dirs)]

        p = self.space_degree
        basis = ([b.pad(p) for b in space_basis("sym_curl_range", l, self.center, self.scale)]
                 + [b.pad(p) for b in space_basis("xxt_range", k, self.center, self.scale)])
        self.n_dofs = len(basis)
        assert self.n_dofs == divdiv_dimension(l, k)

        self.hess_tests = space_basis("hess_range", k - 2, self.center, self.scale)
        self.xperp_tests = space_basis("sym_xperp_range", l - 2, self.center, self.scale)
        assert len(self.hess_tests) == counts["interior_hess"]
        assert len(self.xperp_tests) == counts["interior_xperp"]
        self._test_degree = max(k - 4, l - 1, 0)
        self._interior_cache = {}
        self.callable_degree = 2 * (p + 3) + 4

        self.dofs = self._dof_list(counts)
        self.counts = counts

        self._basis_coeffs = stack_coeffs(basis)      # (n, 3 nc)
        D = self._basis_dof_matrix()
        X, self.cond, self.duality_error = _dual_solve(D)
        self._dual_matrix = X                         # basis weights per shape
        self.shape_coeffs = X.T @ self._basis_coeffs  # (n, 3 nc)
        if not np.isfinite(self.cond) or self.duality_error > 1e-6:
            raise RuntimeError(
                f"degenerate dof matrix for (l, k) = ({l}, {k}): "
                f"condition {self.cond:.3e}, duality error {self.duality_error:.3e}")

    @classmethod
    def for_cell(cls, mesh, t: int, l: int, k: int) -> "DivDivElement":
        cells = mesh.cells[t]
        dirs = [1 if cells[i] < cells[j] else -1 for i, j in _LOCAL_EDGES]
        return cls(mesh.vertices[cells], l, k, dirs)

    @property
    def n_interior(self) -> int:
        return self.counts["interior_hess"] + self.counts["interior_xperp"]

    # -- degree-of-freedom evaluation ---------------------------------------

    def _dof_list(self, counts):
        dofs = []
        for v in range(3):
            for c in range(3):
                dofs.append(DofFunctional("vertex_value", 0, v, c))
        for e in range(3):
            for j in range(self.l - 1):
                dofs.append(DofFunctional("edge_nn", 1, e, j, self.edges[e].direction))
        for e in range(3):
            for j in range(self.l):
                dofs.append(DofFunctional("edge_shear", 1, e, j, self.edges[e].direction))
        for j in range(counts["interior_hess"]):
            dofs.append(DofFunctional("interior_hess", 2, 0, j))
        for j in range(counts["interior_xperp"]):
            dofs.append(DofFunctional("interior_xperp", 2, 0, j))
        return dofs

    def group_slices(self) -> dict:
        """Index ranges of the functional groups in local dof order."""
        c = self.counts
        nn, sh = self.l - 1, self.l
        out = {"vertex": [slice(3 * v, 3 * v + 3) for v in range(3)],
               "edge_nn": [], "edge_shear": []}
        pos = 9
        for e in range(3):
            out["edge_nn"].append(slice(pos, pos + nn))
            pos += nn
        for e in range(3):
            out["edge_shear"].append(slice(pos, pos + sh))
            pos += sh
        out["interior"] = slice(pos, pos + c["interior_hess"] + c["interior_xperp"])
        return out

    def eval_dofs(self, field, quad_degree=None) -> np.ndarray:
        """All degrees of freedom applied to a tensor field.

        Polynomial inputs are integrated exactly; callables default to a
        rule treating them as polynomials of ``self.callable_degree``.
        The effective shear moments need first derivatives.
        """
        tf = as_tensor_field(field)
        deg = quad_degree if quad_degree is not None else tf.degree
        if deg is None:
            deg = self.callable_degree
        out = np.empty(self.n_dofs)
        out[:9] = np.asarray(tf.value(self.verts), float).reshape(-1)
        pos = 9
        nn_moments, shear_moments = [], []
        for edge in self.edges:
            xi, pts, w = edge.quadrature(deg + self.l)
            vals = np.asarray(tf.value(pts), float)
            n1, n2 = edge.normal
            t1, t2 = edge.tangent
            nn = vals @ np.array([n1 * n1, 2 * n1 * n2, n2 * n2])
            L = orthonormal_legendre(xi, self.l, edge.length)
            nn_moments.append(L[: self.l - 1] @ (w * nn))
            if tf.grad is None:
                raise ValueError("effective shear moments need the field's "
                                 "first derivatives")
            g = np.asarray(tf.grad(pts), float)          # (N, 3, 2)
            wtn = np.array([t1 * n1, t1 * n2 + t2 * n1, t2 * n2])
            d_t = (g @ edge.tangent) @ wtn               # tangential derivative
            ndiv = n1 * (g[:, 0, 0] + g[:, 1, 1]) + n2 * (g[:, 1, 0] + g[:, 2, 1])
            shear_moments.append(L @ (w * (d_t + ndiv)))
        for mom in nn_moments:
            out[pos:pos + len(mom)] = mom
            pos += len(mom)
        for mom in shear_moments:
            out[pos:pos + len(mom)] = mom
            pos += len(mom)
        pts, w, tests = self._interior_rule(deg + self._test_degree)
        if len(tests):
            vals = np.asarray(tf.value(pts), float)
            out[pos:] = np.einsum("tqc,qc,c,q->t", tests, vals, SYM_METRIC, w)
        return out

    def _interior_rule(self, degree):
        key = degree
        if key not in self._interior_cache:
            pts, w = triangle_quadrature(self.verts, degree)
            tests = np.stack([t.value(pts) for t in
                              self.hess_tests + self.xperp_tests]) \
                if self.hess_tests or self.xperp_tests else np.zeros((0, len(pts), 3))
            self._interior_cache[key] = (pts, w, tests)
        return self._interior_cache[key]

    def _basis_dof_matrix(self):
        """All functionals applied to all basis tensors in one sweep."""
        p = self.space_degree
        nc = n_coeffs(p)
        n = self.n_dofs
        Bc = self._basis_coeffs.reshape(n, 3, nc)
        loc = lambda pts: (pts - self.center) / self.scale
        D = np.empty((n, n))
        V = monomial_values(p, loc(self.verts))
        D[:9] = np.einsum("mck,vk->vcm", Bc, V).reshape(9, n)
        G1 = np.einsum("mck,jk->mcj", Bc, diff_coeff_matrix(p, 0) / self.scale)
        G2 = np.einsum("mck,jk->mcj", Bc, diff_coeff_matrix(p, 1) / self.scale)
        pos = 9
        nn_rows, sh_rows = [], []
        for edge in self.edges:
            xi, pts, w = edge.quadrature(p + self.l)
            V = monomial_values(p, loc(pts))
            V1 = monomial_values(p - 1, loc(pts))
            vals = np.einsum("mck,qk->mcq", Bc, V)
            g1 = np.einsum("mcj,qj->mcq", G1, V1)
            g2 = np.einsum("mcj,qj->mcq", G2, V1)
            n1, n2 = edge.normal
            t1, t2 = edge.tangent
            L = orthonormal_legendre(xi, self.l, edge.length)
            nn = (n1 * n1) * vals[:, 0] + (2 * n1 * n2) * vals[:, 1] + (n2 * n2) * vals[:, 2]
            nn_rows.append(np.einsum("jq,q,mq->jm", L[: self.l - 1], w, nn))
            wtn = (t1 * n1, t1 * n2 + t2 * n1, t2 * n2)
            d_t = sum(wtn[c] * (t1 * g1[:, c] + t2 * g2[:, c]) for c in range(3))
            ndiv = n1 * (g1[:, 0] + g2[:, 1]) + n2 * (g1[:, 1] + g2[:, 2])
            sh_rows.append(np.einsum("jq,q,mq->jm", L, w, d_t + ndiv))
        for block in nn_rows + sh_rows:
            D[pos:pos + len(block)] = block
            pos += len(block)
        pts, w, tests = self._interior_rule(p + self._test_degree)
        if len(tests):
            V = monomial_values(p, loc(pts))
            vals = np.einsum("mck,qk->mqc", Bc, V)
            D[pos:] = np.einsum("tqc,mqc,c,q->tm", tests, vals, SYM_METRIC, w)
        return D

    def apply_dof(self, i: int, field, quad_degree=None) -> float:
        return float(self.eval_dofs(field, quad_degree)[i])

    # -- shape functions ------------------------------------------------------

    def shape_poly(self, m: int) -> SymTensorPoly2D:
        nc = n_coeffs(self.space_degree)
        row = self.shape_coeffs[m]
        comps = tuple(Poly2D(self.center, self.scale, self.space_degree,
                             row[i * nc:(i + 1) * nc].copy()) for i in range(3))
        return SymTensorPoly2D(comps)

    def shape_values(self, pts) -> np.ndarray:
        """(n_dofs, N, 3) values of all dual shape functions."""
        pts = np.atleast_2d(pts)
        nc = n_coeffs(self.space_degree)
        V = monomial_values(self.space_degree, (pts - self.center) / self.scale)
        S = self.shape_coeffs.reshape(self.n_dofs, 3, nc)
        return np.einsum("mck,qk->mqc", S, V)

    def interpolate(self, field, quad_degree=None) -> SymTensorPoly2D:
        """Nodal interpolant: sum of dof values times dual shapes."""
        dofvals = self.eval_dofs(field, quad_degree)
        return self.from_dof_values(dofvals)

    def from_dof_values(self, dofvals) -> SymTensorPoly2D:
        row = np.asarray(dofvals, float) @ self.shape_coeffs
        nc = n_coeffs(self.space_degree)
        comps = tuple(Poly2D(self.center, self.scale, self.space_degree,
                             row[i * nc:(i + 1) * nc]) for i in range(3))
        return SymTensorPoly2D(comps)


def _dual_solve(D):
    """Invert a dof matrix with two-sided equilibration.

    Returns the dual coefficient matrix X with D @ X = I, the condition
    number of the equilibrated matrix, and the maximal duality defect of
    the equilibrated pairing (the raw defect is not scale-free, so the
    defect is measured after the row and column rescaling).
    """
    n = len(D)
    r = 1.0 / np.abs(D).max(axis=1)
    D1 = r[:, None] * D
    c = 1.0 / np.abs(D1).max(axis=0)
    D2 = D1 * c[None, :]
    cond = float(np.linalg.cond(D2))
    W = np.linalg.solve(D2, np.eye(n))
    defect = float(np.abs(D2 @ W - np.eye(n)).max())
    X = (c[:, None] * W) * r[None, :]
    return X, cond, defect


# -- vector Hermite element ---------------------------------------------------


def hermite_dof_counts(l: int) -> dict:
    if l < 2:
        raise ValueError("need l >= 2")
    return {
        "vertex": 18,
        "edge": 6 * (l - 2),
        "interior": 2 * n_coeffs(l - 2),
    }


class HermiteElement:
    """Vector polynomials of degree l + 1 dual to point values and gradients
    at vertices, edge moments, and interior moments."""

    def __init__(self, verts, l: int, edge_dirs=None):
        verts = np.asarray(verts, float)
        area2 = float(cross2(verts[1] - verts[0], verts[2] - verts[0]))
        if area2 <= 0:
            raise ValueError("vertices must be in counterclockwise order")
        counts = hermite_dof_counts(l)

        self.verts = verts
        self.l = l
        self.degree = l + 1
        self.center = verts.mean(axis=0)
        self.scale = float(max(np.linalg.norm(verts[i] - verts[j])
                               for i, j in _LOCAL_EDGES))
        if edge_dirs is None:
            edge_dirs = _DEFAULT_EDGE_DIRS
        self.edges = [_EdgeFrame(verts[i], verts[j], d)
                      for (i, j), d in zip(_LOCAL_EDGES, edge_dirs)]

        basis = space_basis("P_vec", self.degree, self.center, self.scale)
        self.n_dofs = len(basis)
        assert self.n_dofs == sum(counts.values()) == (l + 2) * (l + 3)
        self.counts = counts
        self._interior_tests = space_basis("P_vec", l - 2, self.center, self.scale)
        self.callable_degree = 2 * (self.degree + 3) + 4
        self.dofs = self._dof_list(counts)

        D = np.empty((self.n_dofs, self.n_dofs))
        for j, b in enumerate(basis):
            D[:, j] = self.eval_dofs(b)
        X, self.cond, self.duality_error = _dual_solve(D)
        self._basis_coeffs = stack_coeffs(basis)
        self.shape_coeffs = X.T @ self._basis_coeffs
        if not np.isfinite(self.cond) or self.duality_error > 1e-6:
            raise RuntimeError(
                f"degenerate Hermite dof matrix for l = {l}: "
                f"condition {self.cond:.3e}, duality error {self.duality_error:.3e}")

    @classmethod
    def for_cell(cls, mesh, t: int, l: int) -> "HermiteElement":
        cells = mesh.cells[t]
        dirs = [1 if cells[i] < cells[j] else -1 for i, j in _LOCAL_EDGES]
        return cls(mesh.vertices[cells], l, dirs)

    def _dof_list(self, counts):
        dofs = []
        for v in range(3):
            for c in range(2):
                dofs.append(DofFunctional("hermite_vertex_value", 0, v, c))
            for c in range(4):
                dofs.append(DofFunctional("hermite_vertex_grad", 0, v, c))
        for e in range(3):
            for j in range(self.l - 2):
                for c in range(2):
                    dofs.append(DofFunctional("hermite_edge", 1, e, 2 * j + c,
                                              self.edges[e].direction))
        for j in range(counts["interior"]):
            dofs.append(DofFunctional("hermite_interior", 2, 0, j))
        return dofs

    def group_slices(self) -> dict:
        l = self.l
        out = {"vertex": [slice(6 * v, 6 * v + 6) for v in range(3)], "edge": []}
        pos = 18
        for e in range(3):
            out["edge"].append(slice(pos, pos + 2 * (l - 2)))
            pos += 2 * (l - 2)
        out["interior"] = slice(pos, self.n_dofs)
        return out

    def eval_dofs(self, field, quad_degree=None) -> np.ndarray:
        vf = as_vector_field(field)
        deg = quad_degree if quad_degree is not None else vf.degree
        if deg is None:
            deg = self.callable_degree
        if vf.jacobian is None:
            raise ValueError("Hermite vertex gradients need the jacobian")
        out = np.empty(self.n_dofs)
        vals = np.asarray(vf.value(self.verts), float)       # (3, 2)
        jacs = np.asarray(vf.jacobian(self.verts), float)    # (3, 2, 2)
        for v in range(3):
            out[6 * v:6 * v + 2] = vals[v]
            out[6 * v + 2:6 * v + 6] = jacs[v].reshape(-1)
        pos = 18
        for edge in self.edges:
            if self.l >= 3:
                xi, pts, w = edge.quadrature(deg + self.l - 3)
                L = orthonormal_legendre(xi, self.l - 2, edge.length)
                vv = np.asarray(vf.value(pts), float)        # (N, 2)
                mom = np.einsum("jq,q,qc->jc", L, w, vv).reshape(-1)
                out[pos:pos + len(mom)] = mom
                pos += len(mom)
        if self._interior_tests:
            pts, w = triangle_quadrature(self.verts, deg + self.l - 2)
            vv = np.asarray(vf.value(pts), float)
            tests = np.stack([t.value(pts) for t in self._interior_tests])
            out[pos:] = np.einsum("tqc,qc,q->t", tests, vv, w)
        return out

    def shape_poly(self, m: int) -> VectorPoly2D:
        nc = n_coeffs(self.degree)
        row = self.shape_coeffs[m]
        return VectorPoly2D(tuple(
            Poly2D(self.center, self.scale, self.degree,
                   row[i * nc:(i + 1) * nc].copy()) for i in range(2)))

    def interpolate(self, field, quad_degree=None) -> VectorPoly2D:
        dofvals = self.eval_dofs(field, quad_degree)
        row = dofvals @ self.shape_coeffs
        nc = n_coeffs(self.degree)
        return VectorPoly2D(tuple(
            Poly2D(self.center, self.scale, self.degree,
                   row[i * nc:(i + 1) * nc]) for i in range(2)))

    def bubble_shapes(self) -> list:
        """Dual shapes of the interior moments; they vanish on the boundary
        together with their vertex gradients."""
        start = self.n_dofs - self.counts["interior"]
        return [self.shape_poly(m) for m in range(start, self.n_dofs)]


def interpolate_commuting(hermite: HermiteElement, element: DivDivElement,
                          field) -> VectorPoly2D:
    """Interpolation onto vector polynomials that intertwines sym curl with
    the tensor element's nodal interpolation.

    The Hermite interpolant is corrected by a bubble so that
    sym curl of the result equals the tensor interpolant of sym curl of the
    input.  The correction solves a consistent least squares system on the
    bubble space; a large residual signals a basis defect and raises.
    """
    if not np.allclose(hermite.verts, element.verts):
        raise ValueError("elements must share the triangle")
    if hermite.l != element.l:
        raise ValueError("elements must share the trace degree l")
    vf = as_vector_field(field)
    w = hermite.interpolate(vf)
    target = element.interpolate(sym_curl_field(vf))
    p = element.space_degree
    rho = target - sym_curl(w).pad(p)
    bubbles = hermite.bubble_shapes()
    A = np.stack([sym_curl(b).pad(p).stacked_coeffs() for b in bubbles], axis=1)
    rhs = rho.stacked_coeffs()
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    resid = np.linalg.norm(A @ sol - rhs)
    norm = max(np.linalg.norm(target.stacked_coeffs()),
               np.linalg.norm(sym_curl(w).pad(p).stacked_coeffs()), 1.0)
    if resid > 1e-8 * norm:
        raise RuntimeError(
            f"bubble correction residual {resid:.3e} exceeds tolerance; "
            "the bubble space does not span the defect")
    correction = w * 0.0
    for s, b in zip(sol, bubbles):
        correction = correction + b * s
    return w + correction


# -- rotated element for the rot-rot operator ---------------------------------


class RotRotElement:
    """Rotation conjugate of a DivDivElement.

    Shape functions are A^T tau A for the base shapes; the degrees of
    freedom test the tangential-tangential trace and the rotated shear,
    which is the same as applying the base functionals to the conjugated
    field.
    """

    def __init__(self, base: DivDivElement):
        self.base = base
        self.n_dofs = base.n_dofs
        self.verts = base.verts

    def shape_poly(self, m: int) -> SymTensorPoly2D:
        return conjugate_tensor(self.base.shape_poly(m))

    def eval_dofs(self, field, quad_degree=None) -> np.ndarray:
        return self.base.eval_dofs(conjugate_tensor_field(as_tensor_field(field)),
                                   quad_degree)

    def interpolate(self, field, quad_degree=None) -> SymTensorPoly2D:
        inner = self.base.interpolate(
            conjugate_tensor_field(as_tensor_field(field)), quad_degree)
        return conjugate_tensor(inner)

    def interpolate_vector(self, hermite: HermiteElement, field) -> VectorPoly2D:
        """Rotated commuting interpolation: A I_K(A^T v)."""
        rotated = rotate_vector_field_cw(as_vector_field(field))
        inner = interpolate_commuting(hermite, self.base, rotated)
        return rotate_vector_ccw(inner)

    def rotrot_shape(self, m: int) -> Poly2D:
        return rotrot(self.shape_poly(m))


def rotate_element(element: DivDivElement) -> RotRotElement:
    return RotRotElement(element)


# -- utilities -----------------------------------------------------------------


def random_triangle(rng, min_angle_deg: float = 25.0, scale: float = 1.0):
    """Random counterclockwise triangle with a minimum-angle guarantee."""
    while True:
        verts = rng.uniform(0.0, 1.0, (3, 2))
        area2 = float(cross2(verts[1] - verts[0], verts[2] - verts[0]))
        if area2 < 0:
            verts = verts[[0, 2, 1]]
            area2 = -area2
        if area2 < 1e-3:
            continue
        angles = []
        for i in range(3):
            a = verts[(i + 1) % 3] - verts[i]
            b = verts[(i + 2) % 3] - verts[i]
            cosang = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1, 1))))
        if min(angles) >= min_angle_deg:
            return verts * scale
