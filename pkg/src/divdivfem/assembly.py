"""Global degree-of-freedom maps and sparse saddle-point assembly.

The tensor space shares vertex values and both edge trace moments between
neighbouring cells; its hybrid variant keeps the shear moments cell-local
and couples them weakly through edge multipliers.  Elements are built per
physical cell with global edge orientations, so scattering needs no sign
flips: a shared functional is literally the same functional in both cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import polyalg as pa
from .element import DivDivElement, HermiteElement, divdiv_dof_counts
from .mesh import TriMesh


class GlobalDofMap:
    """Numbering of the tensor space, the piecewise polynomial space, and
    (for the hybrid variant) the edge multiplier space.

    Global tensor dof order: vertex block (3 per vertex), edge block, cell
    block.  Conforming edges carry the normal-normal moments followed by
    the shear moments; in the hybrid variant the shear moments move into
    the cell block, one copy per incident cell.
    """

    def __init__(self, mesh: TriMesh, l: int, k: int, hybrid: bool = False):
        counts = divdiv_dof_counts(l, k)
        self.mesh = mesh
        self.l, self.k = l, k
        self.hybrid = hybrid
        self.n_interior = counts["interior_hess"] + counts["interior_xperp"]
        nn, sh = l - 1, l

        V, E, T = mesh.n_vertices, mesh.n_edges, mesh.n_cells
        self.edge_offset = 3 * V
        if hybrid:
            per_edge, per_cell = nn, 3 * sh + self.n_interior
        else:
            per_edge, per_cell = nn + sh, self.n_interior
        self.per_edge, self.per_cell = per_edge, per_cell
        self.cell_offset = self.edge_offset + per_edge * E
        self.n_sigma = self.cell_offset + per_cell * T

        nq = pa.n_coeffs(k - 2)
        self.nq_local = nq
        self.n_q = nq * T

        interior = mesh.interior_edges
        self.edge_lambda_rank = -np.ones(E, dtype=int)
        self.edge_lambda_rank[interior] = np.arange(len(interior))
        self.n_lambda = sh * len(interior)

        expected = (3 * V + (2 * l - 1) * E
                    + (l * (l - 1) + (k + 2) * (k - 3) // 2) * T)
        if hybrid:
            expected += sh * len(interior)
        assert self.n_sigma == expected, "dof count disagrees with closed form"

        self.elements = [DivDivElement.for_cell(mesh, t, l, k) for t in range(T)]
        self.q_bases = [pa.orthonormal_cell_basis(k - 2, mesh.cell_coords(t))
                        for t in range(T)]
        self._cell_sigma = [self._build_cell_sigma(t) for t in range(T)]

    def _build_cell_sigma(self, t):
        mesh, l = self.mesh, self.l
        nn, sh = l - 1, l
        idx = []
        for v in mesh.cells[t]:
            idx.extend(range(3 * v, 3 * v + 3))
        for e in mesh.cell_edges[t]:
            base = self.edge_offset + self.per_edge * e
            idx.extend(range(base, base + nn))
        cell_base = self.cell_offset + self.per_cell * t
        if self.hybrid:
            for le in range(3):
                idx.extend(range(cell_base + sh * le, cell_base + sh * (le + 1)))
            interior_base = cell_base + 3 * sh
        else:
            for e in mesh.cell_edges[t]:
                base = self.edge_offset + self.per_edge * e + nn
                idx.extend(range(base, base + sh))
            interior_base = cell_base
        idx.extend(range(interior_base, interior_base + self.n_interior))
        return np.array(idx, dtype=int)

    def cell_sigma_dofs(self, t: int) -> np.ndarray:
        return self._cell_sigma[t]

    def cell_q_dofs(self, t: int) -> np.ndarray:
        nq = self.nq_local
        return np.arange(nq * t, nq * (t + 1))

    def lambda_dofs(self, e: int) -> np.ndarray:
        r = self.edge_lambda_rank[e]
        if r < 0:
            raise ValueError(f"edge {e} is a boundary edge; no multiplier dofs")
        return np.arange(self.l * r, self.l * (r + 1))

    # -- field transfer -------------------------------------------------------

    def interpolate_sigma(self, tensor_field, quad_degree=None) -> np.ndarray:
        """Global nodal interpolation of a smooth tensor field."""
        coeffs = np.zeros(self.n_sigma)
        for t in range(self.mesh.n_cells):
            vals = self.elements[t].eval_dofs(tensor_field, quad_degree)
            coeffs[self._cell_sigma[t]] = vals
        return coeffs

    def project_q(self, func, quad_degree: int) -> np.ndarray:
        """Cellwise L2 projection of a scalar callable onto the q space."""
        coeffs = np.zeros(self.n_q)
        for t in range(self.mesh.n_cells):
            verts = self.mesh.cell_coords(t)
            pts, w = pa.triangle_quadrature(verts, quad_degree)
            fv = np.asarray(func(pts), float)
            vals = np.stack([q.value(pts) for q in self.q_bases[t]])
            coeffs[self.cell_q_dofs(t)] = vals @ (w * fv)
        return coeffs

    def sigma_cell_poly(self, coeffs, t: int) -> pa.SymTensorPoly2D:
        return self.elements[t].from_dof_values(coeffs[self._cell_sigma[t]])

    def q_cell_poly(self, coeffs, t: int) -> pa.Poly2D:
        local = coeffs[self.cell_q_dofs(t)]
        basis = self.q_bases[t]
        acc = np.zeros_like(basis[0].coeffs)
        for c, q in zip(local, basis):
            acc = acc + c * q.coeffs
        return pa.Poly2D(basis[0].center, basis[0].scale, basis[0].degree, acc)


class HermiteDofMap:
    """Global numbering for the vector Hermite space of degree l + 1."""

    def __init__(self, mesh: TriMesh, l: int):
        self.mesh = mesh
        self.l = l
        V, E, T = mesh.n_vertices, mesh.n_edges, mesh.n_cells
        self.per_edge = 2 * (l - 2)
        self.per_cell = 2 * pa.n_coeffs(l - 2)
        self.edge_offset = 6 * V
        self.cell_offset = self.edge_offset + self.per_edge * E
        self.n_dofs = self.cell_offset + self.per_cell * T
        self.elements = [HermiteElement.for_cell(mesh, t, l) for t in range(T)]
        self._cell_dofs = [self._build(t) for t in range(T)]

    def _build(self, t):
        mesh = self.mesh
        idx = []
        for v in mesh.cells[t]:
            idx.extend(range(6 * v, 6 * v + 6))
        for e in mesh.cell_edges[t]:
            base = self.edge_offset + self.per_edge * e
            idx.extend(range(base, base + self.per_edge))
        base = self.cell_offset + self.per_cell * t
        idx.extend(range(base, base + self.per_cell))
        return np.array(idx, dtype=int)

    def cell_dofs(self, t: int) -> np.ndarray:
        return self._cell_dofs[t]

    def interpolate(self, vector_field, quad_degree=None) -> np.ndarray:
        coeffs = np.zeros(self.n_dofs)
        for t in range(self.mesh.n_cells):
            coeffs[self._cell_dofs[t]] = self.elements[t].eval_dofs(
                vector_field, quad_degree)
        return coeffs

    def cell_poly(self, coeffs, t: int) -> pa.VectorPoly2D:
        el = self.elements[t]
        row = coeffs[self._cell_dofs[t]] @ el.shape_coeffs
        nc = pa.n_coeffs(el.degree)
        return pa.VectorPoly2D(tuple(
            pa.Poly2D(el.center, el.scale, el.degree, row[i * nc:(i + 1) * nc])
            for i in range(2)))


def build_global_spaces(mesh: TriMesh, l: int, k: int,
                        hybrid: bool = False) -> GlobalDofMap:
    return GlobalDofMap(mesh, l, k, hybrid=hybrid)


@dataclass
class MixedSystem:
    """Sparse blocks of the conforming saddle problem: mass M, div-div
    coupling B with rows in the orthonormal cellwise basis, load F."""

    dofmap: GlobalDofMap
    M: sp.csr_matrix
    B: sp.csr_matrix
    F: np.ndarray


@dataclass
class HybridSystem:
    """Blocks of the partially hybridized problem; C couples the cellwise
    shear moments to the interior edge multipliers with outward-normal
    signs, so that C @ sigma = 0 enforces shear continuity."""

    dofmap: GlobalDofMap
    M: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    F: np.ndarray


def _cell_matrices(dofmap: GlobalDofMap, t: int):
    el = dofmap.elements[t]
    verts = dofmap.mesh.cell_coords(t)
    p = el.space_degree
    pts, w = pa.triangle_quadrature(verts, 2 * p)
    vals = el.shape_values(pts)                      # (n, q, 3)
    Mloc = np.einsum("mqc,nqc,c,q->mn", vals, vals, pa.SYM_METRIC, w)
    dd_coeffs = (el.shape_coeffs @ pa.divdiv_coeff_matrix(p).T) / el.scale**2
    V2 = pa.monomial_values(p - 2, (pts - el.center) / el.scale)
    dd = dd_coeffs @ V2.T                            # (n, q)
    qv = np.stack([q.value(pts) for q in dofmap.q_bases[t]])
    Bloc = np.einsum("iq,mq,q->im", qv, dd, w)
    return Mloc, Bloc


def _load_vector(dofmap: GlobalDofMap, f, quad_degree: int) -> np.ndarray:
    F = np.zeros(dofmap.n_q)
    if f is None:
        return F
    for t in range(dofmap.mesh.n_cells):
        verts = dofmap.mesh.cell_coords(t)
        pts, w = pa.triangle_quadrature(verts, quad_degree)
        fv = np.asarray(f(pts), float)
        qv = np.stack([q.value(pts) for q in dofmap.q_bases[t]])
        F[dofmap.cell_q_dofs(t)] = qv @ (w * fv)
    return F


def assemble_mixed(dofmap: GlobalDofMap, f=None,
                   load_quad_degree: int | None = None) -> MixedSystem:
    """Assemble mass and div-div blocks cell by cell.

    The load is integrated with a rule exact to ``load_quad_degree``
    (default 2(l + 1), enough for every polynomial product present; pass a
    higher degree for oscillatory data).
    """
    if dofmap.hybrid:
        raise ValueError("assemble_mixed needs a conforming dof map")
    return MixedSystem(dofmap, *_assemble_mb(dofmap),
                       _load_vector(dofmap, f,
                                    load_quad_degree or 2 * (dofmap.l + 1)))


def _assemble_mb(dofmap: GlobalDofMap):
    rows_m, cols_m, data_m = [], [], []
    rows_b, cols_b, data_b = [], [], []
    for t in range(dofmap.mesh.n_cells):
        Mloc, Bloc = _cell_matrices(dofmap, t)
        gs = dofmap.cell_sigma_dofs(t)
        gq = dofmap.cell_q_dofs(t)
        rm, cm = np.meshgrid(gs, gs, indexing="ij")
        rows_m.append(rm.ravel()); cols_m.append(cm.ravel()); data_m.append(Mloc.ravel())
        rb, cb = np.meshgrid(gq, gs, indexing="ij")
        rows_b.append(rb.ravel()); cols_b.append(cb.ravel()); data_b.append(Bloc.ravel())
    n_s, n_q = dofmap.n_sigma, dofmap.n_q
    M = sp.coo_matrix((np.concatenate(data_m),
                       (np.concatenate(rows_m), np.concatenate(cols_m))),
                      shape=(n_s, n_s)).tocsr()
    B = sp.coo_matrix((np.concatenate(data_b),
                       (np.concatenate(rows_b), np.concatenate(cols_b))),
                      shape=(n_q, n_s)).tocsr()
    return M, B


def assemble_hybrid(dofmap: GlobalDofMap, f=None,
                    load_quad_degree: int | None = None) -> HybridSystem:
    """Assemble the hybrid blocks; requires a dof map built with
    ``hybrid=True``.

    The multiplier coupling uses the duality of the shear moments: the
    shear trace of a dual shape function on its own edge is exactly its
    moment basis, so each multiplier row picks the signed cellwise shear
    dofs of that edge.
    """
    if not dofmap.hybrid:
        raise ValueError("assemble_hybrid needs a hybrid dof map")
    M, B = _assemble_mb(dofmap)
    mesh, l = dofmap.mesh, dofmap.l
    rows, cols, data = [], [], []
    for t in range(mesh.n_cells):
        gs = dofmap.cell_sigma_dofs(t)
        slices = dofmap.elements[t].group_slices()
        for le in range(3):
            e = mesh.cell_edges[t, le]
            if dofmap.edge_lambda_rank[e] < 0:
                continue
            sign = mesh.cell_edge_signs[t, le]
            lam = dofmap.lambda_dofs(e)
            shear = gs[slices["edge_shear"][le]]
            rows.extend(lam); cols.extend(shear); data.extend([-float(sign)] * l)
    C = sp.coo_matrix((data, (rows, cols)),
                      shape=(dofmap.n_lambda, dofmap.n_sigma)).tocsr()
    F = _load_vector(dofmap, f, load_quad_degree or 2 * (l + 1))
    return HybridSystem(dofmap, M, B, C, F)


def dump_system(system, path_prefix: str) -> list:
    """Write each sparse block as plain-text "row col value" triplets."""
    blocks = {"M": system.M, "B": system.B}
    if isinstance(system, HybridSystem):
        blocks["C"] = system.C
    written = []
    for name, mat in blocks.items():
        coo = mat.tocoo()
        path = f"{path_prefix}_{name}.txt"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")
        written.append(path)
    return written


# -- stability diagnostics -----------------------------------------------------


def infsup_witness(dofmap: GlobalDofMap, q_coeffs: np.ndarray) -> np.ndarray:
    """Tensor coefficients whose div-div pairing with the given piecewise
    polynomial reproduces its squared mesh-dependent seminorm.

    Vertex values vanish, the normal-normal moments match the scaled jump
    of the normal derivative, the shear trace matches the scaled jump of
    the values, the Hessian moments match the cellwise Hessian, and the
    remaining interior moments vanish.
    """
    if dofmap.hybrid:
        raise ValueError("witness construction targets the conforming space")
    mesh, l = dofmap.mesh, dofmap.l
    coeffs = np.zeros(dofmap.n_sigma)
    cell_polys = [dofmap.q_cell_poly(q_coeffs, t) for t in range(mesh.n_cells)]

    for e in range(mesh.n_edges):
        a = mesh.vertices[mesh.edges[e, 0]]
        b = mesh.vertices[mesh.edges[e, 1]]
        n_e = mesh.edge_normal[e]
        h_e = mesh.edge_lengths[e]
        deg = dofmap.k - 2 + l
        n_qp = max((deg + 2) // 2, 1)
        xi, wq = np.polynomial.legendre.leggauss(n_qp)
        pts = 0.5 * (a + b) + 0.5 * np.outer(xi, b - a)
        wq = 0.5 * h_e * wq
        # orientation-signed jumps: the cell whose outward normal equals the
        # global edge normal enters with +, the other with -
        jump_v = np.zeros(len(pts))
        jump_dn = np.zeros(len(pts))
        for t, sign in zip(mesh.edge_cells[e], mesh.edge_cell_signs[e]):
            if t < 0:
                continue
            p = cell_polys[t]
            jump_v += sign * p.value(pts)
            jump_dn += sign * (pa.grad(p).value(pts) @ n_e)
        L = pa.orthonormal_legendre(xi, l, h_e)
        base = dofmap.edge_offset + dofmap.per_edge * e
        coeffs[base:base + l - 1] = L[:l - 1] @ (wq * (-jump_dn / h_e))
        coeffs[base + l - 1:base + 2 * l - 1] = L @ (wq * (jump_v / h_e**3))

    for t in range(mesh.n_cells):
        el = dofmap.elements[t]
        hess_tests = el.hess_tests
        if not hess_tests:
            continue
        verts = mesh.cell_coords(t)
        hv = pa.hess(cell_polys[t])
        pts, w = pa.triangle_quadrature(verts, 2 * max(dofmap.k - 4, 0))
        vals = hv.value(pts)
        tests = np.stack([s.value(pts) for s in hess_tests])
        moments = np.einsum("tqc,qc,c,q->t", tests, vals, pa.SYM_METRIC, w)
        base = dofmap.cell_offset + dofmap.per_cell * t
        coeffs[base:base + len(hess_tests)] = moments
    return coeffs


def stability_constant(system: MixedSystem) -> float:
    """Smallest generalized singular value of B over the complement of its
    kernel, measured in the full tensor norm (mass plus div-div energy).
    Dense computation, intended for small meshes."""
    M = system.M.toarray()
    B = system.B.toarray()
    H = M + B.T @ B
    S = B @ np.linalg.solve(H, B.T)
    eigs = np.linalg.eigvalsh(0.5 * (S + S.T))
    return float(np.sqrt(max(eigs.min(), 0.0)))
