"""Machine verification of the polynomial and finite element sequences.

Each check computes operator matrices on explicit bases and decides ranks
from singular values with a relative cutoff; a sequence is certified exact
when compositions vanish, ranks match the dimension bookkeeping, and the
alternating dimension sum is zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import polyalg as pa
from .assembly import GlobalDofMap, HermiteDofMap, assemble_mixed
from .element import DivDivElement, HermiteElement
from .mesh import TriMesh

RANK_CUTOFF = 1e-8


def matrix_rank(M: np.ndarray, cutoff: float = RANK_CUTOFF,
                scale: float | None = None) -> int:
    """Rank by singular values above cutoff * scale; the scale defaults to
    the largest singular value.  Pass an external scale when the matrix may
    consist entirely of round-off noise."""
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    ref = s[0] if scale is None else scale
    if ref == 0.0:
        return 0
    return int(np.sum(s > cutoff * ref))


@dataclass
class ArrowStat:
    name: str
    domain_dim: int
    image_rank: int

    @property
    def kernel_dim(self) -> int:
        return self.domain_dim - self.image_rank


@dataclass
class Check:
    description: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.value <= self.tolerance


@dataclass
class ComplexReport:
    title: str
    arrows: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    def arrow(self, name, domain_dim, rank, expected_rank):
        self.arrows.append(ArrowStat(name, domain_dim, rank))
        self.check(f"rank of {name} = {expected_rank}",
                   abs(rank - expected_rank), 0)

    def check(self, description, value, tolerance):
        self.checks.append(Check(description, float(value), float(tolerance)))

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def lines(self) -> list:
        out = [self.title]
        for a in self.arrows:
            out.append(f"  map {a.name}: domain {a.domain_dim}, "
                       f"rank {a.image_rank}, kernel {a.kernel_dim}")
        for c in self.checks:
            status = "ok" if c.passed else "FAIL"
            out.append(f"  [{status}] {c.description} "
                       f"(value {c.value:.3e}, tol {c.tolerance:.1e})")
        return out


def _op_matrix(images, degree):
    """Columns are stacked coefficients of the image polynomials."""
    return pa.stack_coeffs([im.pad(degree) for im in images]).T


def _rel_composition_norm(images, reference):
    num = max((im.coeff_norm() if isinstance(im, pa.Poly2D)
               else max(c.coeff_norm() for c in im.comps)) for im in images)
    den = max((im.coeff_norm() if isinstance(im, pa.Poly2D)
               else max(c.coeff_norm() for c in im.comps)) for im in reference)
    return num / max(den, 1e-300)


def check_poly_complexes(k: int, seed: int = 0) -> ComplexReport:
    """Rank and identity checks of the four polynomial sequences of order k
    plus the two direct sum decompositions they induce."""
    if k < 3:
        raise ValueError("need k >= 3")
    rng = np.random.default_rng(seed)
    center = rng.uniform(-0.5, 0.5, 2)
    scale = float(rng.uniform(0.5, 1.5))
    rep = ComplexReport(f"polynomial sequences, k = {k}")

    dim_s = lambda m: 3 * pa.n_coeffs(m)
    dim_v = lambda m: 2 * pa.n_coeffs(m)

    # differential sequence: RT -> P_{k+1}(R2) -> P_k(S) -> P_{k-2} -> 0
    vbasis = pa.space_basis("P_vec", k + 1, center, scale)
    sc_imgs = [pa.sym_curl(v) for v in vbasis]
    A_sc = _op_matrix(sc_imgs, k)
    rep.arrow("sym curl on vector degree k+1", dim_v(k + 1),
              matrix_rank(A_sc), dim_v(k + 1) - 3)
    sbasis = pa.space_basis("P_sym", k, center, scale)
    dd_imgs = [pa.divdiv(t) for t in sbasis]
    A_dd = _op_matrix(dd_imgs, k - 2)
    rep.arrow("div div on tensor degree k", dim_s(k),
              matrix_rank(A_dd), pa.n_coeffs(k - 2))
    comp = [pa.divdiv(t) for t in sc_imgs]
    rep.check("div div after sym curl vanishes",
              _rel_composition_norm(comp, sc_imgs), 1e-12)
    rep.check("exactness at the tensor slot",
              abs(matrix_rank(A_sc) - (dim_s(k) - pa.n_coeffs(k - 2))), 0)

    # multiplication sequence: 0 -> P_{k-2} -> P_k(S) -> P_{k+1}(R2) -> RT -> 0
    qbasis = pa.space_basis("P", k - 2, center, scale)
    xxt_imgs = [pa.xxT_mul(q) for q in qbasis]
    rep.arrow("x x^T multiplication", pa.n_coeffs(k - 2),
              matrix_rank(_op_matrix(xxt_imgs, k)), pa.n_coeffs(k - 2))
    xp_imgs = [pa.xperp_mul(t) for t in sbasis]
    A_xp = _op_matrix(xp_imgs, k + 1)
    rep.arrow("x^perp multiplication", dim_s(k),
              matrix_rank(A_xp), dim_s(k) - pa.n_coeffs(k - 2))
    comp = [pa.xperp_mul(t) for t in xxt_imgs]
    rep.check("x^perp after x x^T vanishes",
              _rel_composition_norm(comp, xxt_imgs), 1e-12)
    pirt_imgs = [pa.pi_RT(v) for v in vbasis]
    A_pirt = _op_matrix(pirt_imgs, 1)
    rep.arrow("lowest-order reducer", dim_v(k + 1), matrix_rank(A_pirt), 3)
    comp = [pa.pi_RT(v) for v in xp_imgs]
    rep.check("reducer after x^perp vanishes",
              _rel_composition_norm(comp, xp_imgs), 1e-12)
    rt = pa.space_basis("RT", 1, center, scale)
    decomp = np.hstack([A_xp, _op_matrix(rt, k + 1)])
    rep.check("vector degree k+1 splits into tensor x^perp plus RT",
              abs(matrix_rank(decomp) - dim_v(k + 1)), 0)

    # Hessian sequence: P_1 -> P_{k+1} -> P_{k-1}(S) -> P_{k-2}(R2) -> 0
    pk1 = pa.space_basis("P", k + 1, center, scale)
    hess_imgs = [pa.hess(q) for q in pk1]
    A_h = _op_matrix(hess_imgs, k - 1)
    rep.arrow("hessian on scalar degree k+1", pa.n_coeffs(k + 1),
              matrix_rank(A_h), pa.n_coeffs(k + 1) - 3)
    sk1 = pa.space_basis("P_sym", k - 1, center, scale)
    rot_imgs = [pa.rot_tensor(t) for t in sk1]
    rep.arrow("row-wise rot on tensor degree k-1", dim_s(k - 1),
              matrix_rank(_op_matrix(rot_imgs, k - 2)), dim_v(k - 2))
    comp = [pa.rot_tensor(t) for t in hess_imgs]
    rep.check("rot after hessian vanishes",
              _rel_composition_norm(comp, hess_imgs), 1e-12)
    rep.check("exactness at the degree k-1 tensor slot",
              abs(matrix_rank(A_h) - (dim_s(k - 1) - dim_v(k - 2))), 0)

    # its multiplication dual: 0 -> P_{k-2}(R2) -> P_{k-1}(S) -> P_{k+1} -> P_1 -> 0
    vk2 = pa.space_basis("P_vec", k - 2, center, scale)
    sxp_imgs = [pa.sym_xperp_outer(v) for v in vk2]
    rep.arrow("sym(x^perp outer .)", dim_v(k - 2),
              matrix_rank(_op_matrix(sxp_imgs, k - 1)), dim_v(k - 2))
    xtx_imgs = [pa.xtx_sandwich(t) for t in sk1]
    A_xtx = _op_matrix(xtx_imgs, k + 1)
    rep.arrow("x^T tau x sandwich", dim_s(k - 1),
              matrix_rank(A_xtx), dim_s(k - 1) - dim_v(k - 2))
    comp = [pa.xtx_sandwich(t) for t in sxp_imgs]
    rep.check("sandwich after sym(x^perp outer .) vanishes",
              _rel_composition_norm(comp, sxp_imgs), 1e-12)
    pi1_imgs = [pa.pi_1(q) for q in pk1]
    rep.arrow("affine reducer", pa.n_coeffs(k + 1),
              matrix_rank(_op_matrix(pi1_imgs, 1)), 3)
    comp = [pa.pi_1(q) for q in xtx_imgs]
    rep.check("affine reducer after sandwich vanishes",
              _rel_composition_norm(comp, xtx_imgs), 1e-12)

    # direct sum decompositions
    C = pa.space_basis("sym_curl_range", k, center, scale)
    Cp = pa.space_basis("xxt_range", k, center, scale)
    rep.check("tensor degree k splits into sym curl range plus x x^T range",
              abs(matrix_rank(pa.stack_coeffs(C + Cp)) - dim_s(k)), 0)
    ddp = np.stack([pa.divdiv(t).pad(k - 2).coeffs for t in Cp]).T
    s = np.linalg.svd(ddp, compute_uv=False)
    rep.check("div div bijects the x x^T range onto scalars",
              RANK_CUTOFF if s[-1] <= RANK_CUTOFF * s[0] else 0.0, 1e-12)
    H = pa.space_basis("hess_range", k + 1, center, scale)
    S = pa.space_basis("sym_xperp_range", k - 2, center, scale)
    rep.check("tensor degree k-1 splits into hessians plus sym(x^perp outer .)",
              abs(matrix_rank(pa.stack_coeffs(
                  [t.pad(k - 1) for t in H + S])) - dim_s(k - 1)), 0)
    rot_m = np.stack([pa.rot_tensor(t).pad(k - 2).stacked_coeffs() for t in S]).T
    s = np.linalg.svd(rot_m, compute_uv=False)
    rep.check("rot bijects sym(x^perp outer .) onto vectors",
              RANK_CUTOFF if s[-1] <= RANK_CUTOFF * s[0] else 0.0, 1e-12)

    # scaling identity on homogeneous polynomials of degree 0..4
    for d in range(5):
        nlow = pa.n_coeffs(d - 1) if d > 0 else 0
        coeffs = np.zeros(pa.n_coeffs(d))
        coeffs[nlow:] = rng.normal(size=pa.n_coeffs(d) - nlow)
        q = pa.Poly2D(center, scale, d, coeffs)
        lhs = pa.divdiv(pa.xxT_mul(q))
        rhs = q * float((d + 3) * (d + 2))
        err = (lhs - rhs).coeff_norm() / max(rhs.coeff_norm(), 1e-300)
        rep.check(f"div div of x x^T q = (d+3)(d+2) q, homogeneous degree {d}",
                  err, 1e-12)
    return rep


def _span_residual(span_matrix, vectors):
    """Largest relative distance of the vectors from the span (columns)."""
    worst = 0.0
    for v in vectors:
        sol, *_ = np.linalg.lstsq(span_matrix, v, rcond=None)
        num = np.linalg.norm(span_matrix @ sol - v)
        worst = max(worst, num / max(np.linalg.norm(v), 1e-300))
    return worst


def check_local_fem_complexes(l: int, k: int, verts=None,
                              seed: int = 0) -> ComplexReport:
    """Exactness of the elementwise sequence and of its reduced variant on
    the bubble spaces."""
    if verts is None:
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    rep = ComplexReport(f"element sequences, (l, k) = ({l}, {k})")
    el = DivDivElement(verts, l, k)
    hm = HermiteElement(verts, l)
    p = el.space_degree

    dim_v = hm.n_dofs
    dim_sigma = el.n_dofs
    nq = pa.n_coeffs(k - 2)

    # full sequence: RT -> V -> Sigma -> P_{k-2} -> 0
    v_shapes = [hm.shape_poly(m) for m in range(dim_v)]
    sc_imgs = [pa.sym_curl(v) for v in v_shapes]
    A_sc = _op_matrix(sc_imgs, p)
    rep.arrow("sym curl on the vector element", dim_v,
              matrix_rank(A_sc), dim_v - 3)
    span = el._basis_coeffs.T
    rep.check("sym curl images lie in the tensor shape space",
              _span_residual(span, [im.pad(p).stacked_coeffs() for im in sc_imgs]),
              1e-9)
    dd_imgs = [pa.divdiv(el.shape_poly(m)) for m in range(dim_sigma)]
    A_dd = _op_matrix(dd_imgs, max(p - 2, 0))
    rep.arrow("div div on the tensor element", dim_sigma, matrix_rank(A_dd), nq)
    junk = max(np.abs(im.pad(p).coeffs[pa.n_coeffs(k - 2):]).max(initial=0.0)
               for im in dd_imgs)
    norm = max(im.coeff_norm() for im in dd_imgs)
    rep.check("div div images have degree at most k-2", junk / norm, 1e-10)
    rep.check("exactness at the tensor slot",
              abs((dim_v - 3) - (dim_sigma - nq)), 0)
    rep.check("alternating dimension sum",
              abs(3 - dim_v + dim_sigma - nq), 0)

    # reduced sequence: 0 -> bubbles -> interior tensor kernel -> mean-free
    bubbles = hm.bubble_shapes()
    ring = [el.shape_poly(m) for m in range(dim_sigma - el.n_interior, dim_sigma)]
    sc_b = [pa.sym_curl(b) for b in bubbles]
    rep.arrow("sym curl on the vector bubbles", len(bubbles),
              matrix_rank(_op_matrix(sc_b, p)), len(bubbles))
    ring_span = np.stack([t.stacked_coeffs() for t in ring]).T
    rep.check("bubble images lie in the interior tensor space",
              _span_residual(ring_span,
                             [im.pad(p).stacked_coeffs() for im in sc_b]), 1e-9)
    # kernel shapes map to pure round-off, so rank and moment checks are
    # scaled by the div-div magnitude of the full element
    dd_scale = max(np.linalg.svd(A_dd, compute_uv=False)[0], 1e-300)
    dd_ring = [pa.divdiv(t) for t in ring]
    A_ddr = _op_matrix(dd_ring, max(p - 2, 0))
    rank_ddr = matrix_rank(A_ddr, scale=dd_scale)
    rep.arrow("div div on the interior tensor space", len(ring), rank_ddr, nq - 3)
    rep.check("reduced exactness: kernel equals the bubble image",
              abs((len(ring) - rank_ddr) - len(bubbles)), 0)
    p1 = pa.space_basis("P", 1, el.center, el.scale)
    worst = 0.0
    for im in dd_ring:
        for q in p1:
            num = abs(pa.integrate_triangle(im * q, verts))
            worst = max(worst, num / dd_scale)
    rep.check("div div of interior tensors is mean and moment free", worst, 1e-10)
    return rep


def check_global_fem_complex(mesh: TriMesh, l: int, k: int) -> ComplexReport:
    """Dense rank verification of the assembled global sequence."""
    if mesh.n_cells > 64:
        raise ValueError("dense verification is limited to at most 64 cells")
    rep = ComplexReport(
        f"global sequence, (l, k) = ({l}, {k}), {mesh.n_cells} cells")
    dofmap = GlobalDofMap(mesh, l, k)
    vmap = HermiteDofMap(mesh, l)
    n_sigma, n_q, n_v = dofmap.n_sigma, dofmap.n_q, vmap.n_dofs

    V, E, T = mesh.n_vertices, mesh.n_edges, mesh.n_cells
    rep.check("tensor dimension matches the entity count formula",
              abs(n_sigma - (3 * V + (2 * l - 1) * E
                             + (l * (l - 1) + (k + 2) * (k - 3) // 2) * T)), 0)
    rep.check("vector dimension matches the entity count formula",
              abs(n_v - (6 * V + 2 * (l - 2) * E + l * (l - 1) * T)), 0)

    SC = np.zeros((n_sigma, n_v))
    for t in range(T):
        el = dofmap.elements[t]
        rows = dofmap.cell_sigma_dofs(t)
        cols = vmap.cell_dofs(t)
        hm = vmap.elements[t]
        for j in range(hm.n_dofs):
            tau = pa.sym_curl(hm.shape_poly(j))
            SC[rows, cols[j]] = el.eval_dofs(tau)
    B = assemble_mixed(dofmap).B.toarray()

    rank_sc = matrix_rank(SC)
    rank_b = matrix_rank(B)
    rep.arrow("global sym curl", n_v, rank_sc, n_v - 3)
    rep.arrow("global div div", n_sigma, rank_b, n_q)
    comp = B @ SC
    rep.check("div div after sym curl vanishes globally",
              np.abs(comp).max() / max(np.abs(B).max() * np.abs(SC).max(), 1e-300),
              1e-10)
    rep.check("exactness at the global tensor slot",
              abs(rank_sc - (n_sigma - n_q)), 0)
    rep.check("alternating dimension sum with the rigid kernel",
              abs(3 - n_v + n_sigma - n_q), 0)
    rt_coeffs = [vmap.interpolate(v)
                 for v in pa.space_basis("RT", 1, np.zeros(2), 1.0)]
    worst = max(np.abs(SC @ c).max() / max(np.abs(c).max(), 1e-300)
                for c in rt_coeffs)
    rep.check("lowest-order fields span the global kernel start", worst, 1e-9)
    return rep


def check_commuting_diagram(mesh: TriMesh, l: int, k: int,
                            seed: int = 0) -> ComplexReport:
    """Residuals of the two interpolation identities on random global
    polynomial fields: div div after interpolation projects, and sym curl
    intertwines the vector and tensor interpolations."""
    rng = np.random.default_rng(seed)
    center = np.array([0.5, 0.5])
    rep = ComplexReport(
        f"commuting identities, (l, k) = ({l}, {k}), {mesh.n_cells} cells")
    tau = pa.SymTensorPoly2D(tuple(
        pa.Poly2D(center, 1.0, k + 2, rng.normal(size=pa.n_coeffs(k + 2)))
        for _ in range(3)))
    v = pa.VectorPoly2D(tuple(
        pa.Poly2D(center, 1.0, k + 3, rng.normal(size=pa.n_coeffs(k + 3)))
        for _ in range(2)))

    from .element import interpolate_commuting

    num_dd = den_dd = num_sc = den_sc = 0.0
    for t in range(mesh.n_cells):
        verts = mesh.cell_coords(t)
        el = DivDivElement.for_cell(mesh, t, l, k)
        hm = HermiteElement.for_cell(mesh, t, l)
        pts, w = pa.triangle_quadrature(verts, 2 * (k + 3))

        lhs = pa.divdiv(el.interpolate(tau))
        dd_tau = pa.divdiv(tau)
        qb = pa.orthonormal_cell_basis(k - 2, verts)
        proj = np.zeros(len(pts))
        for q in qb:
            qv = q.value(pts)
            proj += float(w @ (qv * dd_tau.value(pts))) * qv
        r = lhs.value(pts) - proj
        num_dd += float(w @ r**2)
        den_dd += float(w @ dd_tau.value(pts) ** 2)

        ik = interpolate_commuting(hm, el, v)
        lhs2 = pa.sym_curl(ik).pad(el.space_degree)
        rhs2 = el.interpolate(pa.sym_curl_field(pa.as_vector_field(v)))
        dv = lhs2 - rhs2
        dvv = dv.value(pts)
        num_sc += float(np.einsum("qc,qc,c,q->", dvv, dvv, pa.SYM_METRIC, w))
        ref = rhs2.value(pts)
        den_sc += float(np.einsum("qc,qc,c,q->", ref, ref, pa.SYM_METRIC, w))

    rep.check("div div of the tensor interpolant equals the projected div div",
              np.sqrt(num_dd / max(den_dd, 1e-300)), 1e-9)
    rep.check("sym curl of the vector interpolant equals the tensor interpolant",
              np.sqrt(num_sc / max(den_sc, 1e-300)), 1e-9)
    return rep
