"""Exact polynomial algebra on triangles.

Bivariate polynomials are stored as coefficient vectors over the centered,
scaled monomial basis {X^a Y^b} with (X, Y) = (x - center)/scale, ordered by
total degree and, within a degree, by increasing power of Y.  Differential
operators act at coefficient level; multiplication operators measure the
coordinate from the polynomial's own center.  Integration over triangles
uses a tensorized Gauss rule through the collapsed-square map, exact to any
requested polynomial degree; edges use plain Gauss rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg


def n_coeffs(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def exponents(degree: int) -> np.ndarray:
    """(n, 2) array of exponents (a, b), graded order, Y-power increasing."""
    exp = np.array(
        [(d - j, j) for d in range(degree + 1) for j in range(d + 1)], dtype=int
    )
    exp.setflags(write=False)
    return exp


def _index(a: int, b: int) -> int:
    d = a + b
    return d * (d + 1) // 2 + b


def _indices(exp: np.ndarray) -> np.ndarray:
    d = exp[:, 0] + exp[:, 1]
    return d * (d + 1) // 2 + exp[:, 1]


@lru_cache(maxsize=None)
def _diff_table(degree: int, i: int):
    """Source indices, target indices, and factors of d/dX_i on coefficients."""
    exp = exponents(degree)
    src = np.nonzero(exp[:, i] > 0)[0]
    tgt = exp[src].copy()
    tgt[:, i] -= 1
    return src, _indices(tgt), exp[src, i].astype(float)


@lru_cache(maxsize=None)
def _shift_table(degree: int, i: int):
    """Target indices of multiplication by X_i on coefficients."""
    exp = exponents(degree).copy()
    exp[:, i] += 1
    return _indices(exp)


@lru_cache(maxsize=None)
def diff_coeff_matrix(degree: int, i: int) -> np.ndarray:
    """Dense matrix of d/dX_i acting on coefficient vectors; divide by the
    frame scale to differentiate in physical coordinates."""
    src, idx, fac = _diff_table(degree, i)
    D = np.zeros((n_coeffs(max(degree - 1, 0)), n_coeffs(degree)))
    if degree > 0:
        D[idx, src] = fac
    D.setflags(write=False)
    return D


@lru_cache(maxsize=None)
def divdiv_coeff_matrix(degree: int) -> np.ndarray:
    """Matrix of the div-div operator on stacked (11, 12, 22) coefficient
    vectors, in local coordinates; divide by scale squared for physical."""
    d1 = diff_coeff_matrix(degree, 0)
    d2 = diff_coeff_matrix(degree, 1)
    d11 = diff_coeff_matrix(max(degree - 1, 0), 0) @ d1
    d12 = diff_coeff_matrix(max(degree - 1, 0), 1) @ d1
    d22 = diff_coeff_matrix(max(degree - 1, 0), 1) @ d2
    M = np.hstack([d11, 2.0 * d12, d22])
    M.setflags(write=False)
    return M


@lru_cache(maxsize=None)
def gauss_pm1(n: int):
    """Gauss-Legendre rule on [-1, 1], cached."""
    x, w = npleg.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def monomial_values(degree: int, X: np.ndarray) -> np.ndarray:
    """Values of all basis monomials at local coordinates X, shape (N, n)."""
    X = np.atleast_2d(X)
    powx = np.ones((len(X), degree + 1))
    powy = np.ones((len(X), degree + 1))
    for i in range(1, degree + 1):
        powx[:, i] = powx[:, i - 1] * X[:, 0]
        powy[:, i] = powy[:, i - 1] * X[:, 1]
    exp = exponents(degree)
    return powx[:, exp[:, 0]] * powy[:, exp[:, 1]]


@dataclass(frozen=True)
class Poly2D:
    """Scalar bivariate polynomial over a centered, scaled monomial basis."""

    center: np.ndarray
    scale: float
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        if len(self.coeffs) != n_coeffs(self.degree):
            raise ValueError("coefficient length does not match degree")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def zero(cls, degree: int, center, scale: float) -> "Poly2D":
        return cls(np.asarray(center, float), float(scale), degree,
                   np.zeros(n_coeffs(degree)))

    def local(self, pts: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(pts) - self.center) / self.scale

    def value(self, pts: np.ndarray) -> np.ndarray:
        return monomial_values(self.degree, self.local(pts)) @ self.coeffs

    __call__ = value

    def partial(self, i: int) -> "Poly2D":
        """Derivative with respect to the physical coordinate x_i."""
        if self.degree == 0:
            return Poly2D.zero(0, self.center, self.scale)
        m = self.degree
        src, idx, fac = _diff_table(m, i)
        out = np.zeros(n_coeffs(m - 1))
        out[idx] = fac * self.coeffs[src] / self.scale
        return Poly2D(self.center, self.scale, m - 1, out)

    def pad(self, degree: int) -> "Poly2D":
        if degree < self.degree:
            raise ValueError("cannot pad to a lower degree")
        if degree == self.degree:
            return self
        out = np.zeros(n_coeffs(degree))
        out[: len(self.coeffs)] = self.coeffs
        return Poly2D(self.center, self.scale, degree, out)

    def mul_local(self, i: int) -> "Poly2D":
        """Multiply by the local coordinate X_i; degree rises by one."""
        m = self.degree
        idx = _shift_table(m, i)
        out = np.zeros(n_coeffs(m + 1))
        out[idx] = self.coeffs
        return Poly2D(self.center, self.scale, m + 1, out)

    def mul_centered(self, i: int) -> "Poly2D":
        """Multiply by (x_i - center_i) = scale * X_i."""
        return self.mul_local(i) * self.scale

    def __add__(self, other: "Poly2D") -> "Poly2D":
        _check_frame(self, other)
        m = max(self.degree, other.degree)
        return Poly2D(self.center, self.scale, m,
                      self.pad(m).coeffs + other.pad(m).coeffs)

    def __sub__(self, other: "Poly2D") -> "Poly2D":
        return self + (-other)

    def __neg__(self) -> "Poly2D":
        return Poly2D(self.center, self.scale, self.degree, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Poly2D):
            return poly_mul(self, other)
        return Poly2D(self.center, self.scale, self.degree,
                      self.coeffs * float(other))

    __rmul__ = __mul__

    def coeff_norm(self) -> float:
        return float(np.abs(self.coeffs).max(initial=0.0))


def _check_frame(p: Poly2D, q: Poly2D) -> None:
    if not np.allclose(p.center, q.center) or not np.isclose(p.scale, q.scale):
        raise ValueError("polynomials live in different frames")


def poly_mul(p: Poly2D, q: Poly2D) -> Poly2D:
    _check_frame(p, q)
    m = p.degree + q.degree
    out = np.zeros(n_coeffs(m))
    ep, eq = exponents(p.degree), exponents(q.degree)
    for i, (a, b) in enumerate(ep):
        ci = p.coeffs[i]
        if ci == 0.0:
            continue
        idx = np.array([_index(a + c, b + d) for c, d in eq])
        np.add.at(out, idx, ci * q.coeffs)
    return Poly2D(p.center, p.scale, m, out)


@dataclass(frozen=True)
class VectorPoly2D:
    """Two scalar components sharing one frame and degree."""

    comps: tuple

    def __post_init__(self):
        c = self.comps
        if len(c) != 2:
            raise ValueError("expected two components")
        _check_frame(c[0], c[1])
        if c[0].degree != c[1].degree:
            raise ValueError("components must share the degree")

    @classmethod
    def from_polys(cls, c1: Poly2D, c2: Poly2D) -> "VectorPoly2D":
        m = max(c1.degree, c2.degree)
        return cls((c1.pad(m), c2.pad(m)))

    @property
    def center(self):
        return self.comps[0].center

    @property
    def scale(self):
        return self.comps[0].scale

    @property
    def degree(self):
        return self.comps[0].degree

    def value(self, pts) -> np.ndarray:
        return np.stack([c.value(pts) for c in self.comps], axis=-1)

    def jacobian(self, pts) -> np.ndarray:
        """(N, 2, 2) array J[:, c, d] = d v_c / d x_d."""
        return np.stack(
            [np.stack([self.comps[c].partial(d).value(pts) for d in (0, 1)], axis=-1)
             for c in (0, 1)], axis=1)

    def pad(self, m) -> "VectorPoly2D":
        return VectorPoly2D(tuple(c.pad(m) for c in self.comps))

    def __add__(self, other):
        return VectorPoly2D.from_polys(*(a + b for a, b in zip(self.comps, other.comps)))

    def __sub__(self, other):
        return VectorPoly2D.from_polys(*(a - b for a, b in zip(self.comps, other.comps)))

    def __mul__(self, s):
        return VectorPoly2D(tuple(c * float(s) for c in self.comps))

    __rmul__ = __mul__

    def stacked_coeffs(self) -> np.ndarray:
        return np.concatenate([c.coeffs for c in self.comps])


@dataclass(frozen=True)
class SymTensorPoly2D:
    """Symmetric 2x2 tensor polynomial, components stored as (11, 12, 22)."""

    comps: tuple

    def __post_init__(self):
        c = self.comps
        if len(c) != 3:
            raise ValueError("expected three components")
        for q in c[1:]:
            _check_frame(c[0], q)
            if q.degree != c[0].degree:
                raise ValueError("components must share the degree")

    @classmethod
    def from_polys(cls, c11, c12, c22) -> "SymTensorPoly2D":
        m = max(c11.degree, c12.degree, c22.degree)
        return cls((c11.pad(m), c12.pad(m), c22.pad(m)))

    @property
    def center(self):
        return self.comps[0].center

    @property
    def scale(self):
        return self.comps[0].scale

    @property
    def degree(self):
        return self.comps[0].degree

    def value(self, pts) -> np.ndarray:
        """(N, 3) component values in the order (11, 12, 22)."""
        return np.stack([c.value(pts) for c in self.comps], axis=-1)

    def grad_values(self, pts) -> np.ndarray:
        """(N, 3, 2) array of first partials of each component."""
        return np.stack(
            [np.stack([self.comps[c].partial(d).value(pts) for d in (0, 1)], axis=-1)
             for c in range(3)], axis=1)

    def pad(self, m) -> "SymTensorPoly2D":
        return SymTensorPoly2D(tuple(c.pad(m) for c in self.comps))

    def __add__(self, other):
        return SymTensorPoly2D.from_polys(*(a + b for a, b in zip(self.comps, other.comps)))

    def __sub__(self, other):
        return SymTensorPoly2D.from_polys(*(a - b for a, b in zip(self.comps, other.comps)))

    def __mul__(self, s):
        return SymTensorPoly2D(tuple(c * float(s) for c in self.comps))

    __rmul__ = __mul__

    def stacked_coeffs(self) -> np.ndarray:
        return np.concatenate([c.coeffs for c in self.comps])


# -- differential operators (row-wise conventions) ---------------------------


def grad(p: Poly2D) -> VectorPoly2D:
    return VectorPoly2D((p.partial(0), p.partial(1)))


def hess(p: Poly2D) -> SymTensorPoly2D:
    g0, g1 = p.partial(0), p.partial(1)
    return SymTensorPoly2D((g0.partial(0), g0.partial(1), g1.partial(1)))


def curl_scalar(p: Poly2D) -> VectorPoly2D:
    return VectorPoly2D((p.partial(1), -p.partial(0)))


def sym_curl(v: VectorPoly2D) -> SymTensorPoly2D:
    v1, v2 = v.comps
    return SymTensorPoly2D((
        v1.partial(1),
        (v2.partial(1) - v1.partial(0)) * 0.5,
        -v2.partial(0),
    ))


def div_tensor(t: SymTensorPoly2D) -> VectorPoly2D:
    t11, t12, t22 = t.comps
    return VectorPoly2D((
        t11.partial(0) + t12.partial(1),
        t12.partial(0) + t22.partial(1),
    ))


def divdiv(t: SymTensorPoly2D) -> Poly2D:
    t11, t12, t22 = t.comps
    return (t11.partial(0).partial(0) + 2.0 * t12.partial(0).partial(1)
            + t22.partial(1).partial(1))


def rot_vector(v: VectorPoly2D) -> Poly2D:
    return v.comps[1].partial(0) - v.comps[0].partial(1)


def rot_tensor(t: SymTensorPoly2D) -> VectorPoly2D:
    t11, t12, t22 = t.comps
    return VectorPoly2D((
        t12.partial(0) - t11.partial(1),
        t22.partial(0) - t12.partial(1),
    ))


def rotrot(t: SymTensorPoly2D) -> Poly2D:
    t11, t12, t22 = t.comps
    return (t22.partial(0).partial(0) - 2.0 * t12.partial(0).partial(1)
            + t11.partial(1).partial(1))


def curlcurl_scalar(p: Poly2D) -> SymTensorPoly2D:
    h = hess(p)
    return SymTensorPoly2D((h.comps[2], -h.comps[1], h.comps[0]))


def def_vec(v: VectorPoly2D) -> SymTensorPoly2D:
    v1, v2 = v.comps
    return SymTensorPoly2D((
        v1.partial(0),
        (v1.partial(1) + v2.partial(0)) * 0.5,
        v2.partial(1),
    ))


def directional_derivative(p: Poly2D, d) -> Poly2D:
    return p.partial(0) * float(d[0]) + p.partial(1) * float(d[1])


# -- multiplication (Koszul-type) operators, origin at the center ------------


def xxT_mul(q: Poly2D) -> SymTensorPoly2D:
    """q -> (x - c)(x - c)^T q."""
    x1q = q.mul_centered(0)
    x2q = q.mul_centered(1)
    return SymTensorPoly2D.from_polys(
        x1q.mul_centered(0), x1q.mul_centered(1), x2q.mul_centered(1))


def xperp_mul(t: SymTensorPoly2D) -> VectorPoly2D:
    """tau -> tau (x - c)^perp with x^perp = (x_2, -x_1)."""
    t11, t12, t22 = t.comps
    return VectorPoly2D.from_polys(
        t11.mul_centered(1) - t12.mul_centered(0),
        t12.mul_centered(1) - t22.mul_centered(0),
    )


def sym_xperp_outer(v: VectorPoly2D) -> SymTensorPoly2D:
    """v -> sym((x - c)^perp otimes v)."""
    v1, v2 = v.comps
    xp1 = lambda p: p.mul_centered(1)      # multiply by (x-c)_2
    xp2 = lambda p: -1.0 * p.mul_centered(0)  # multiply by -(x-c)_1
    return SymTensorPoly2D.from_polys(
        xp1(v1),
        (xp1(v2) + xp2(v1)) * 0.5,
        xp2(v2),
    )


def xtx_sandwich(t: SymTensorPoly2D) -> Poly2D:
    t11, t12, t22 = t.comps
    return (t11.mul_centered(0).mul_centered(0)
            + 2.0 * t12.mul_centered(0).mul_centered(1)
            + t22.mul_centered(1).mul_centered(1))


def pi_RT(v: VectorPoly2D) -> VectorPoly2D:
    """v -> v(c) + (div v)(c) (x - c)/2, the lowest-order H(div) reducer."""
    c = v.center[None, :]
    v0 = v.value(c)[0]
    d0 = float(v.comps[0].partial(0).value(c)[0] + v.comps[1].partial(1).value(c)[0])
    out = []
    for i in (0, 1):
        coeffs = np.zeros(3)
        coeffs[0] = v0[i]
        coeffs[1 + i] = 0.5 * d0 * v.scale
        out.append(Poly2D(v.center, v.scale, 1, coeffs))
    return VectorPoly2D(tuple(out))


def pi_1(p: Poly2D) -> Poly2D:
    """p -> p(c) + (x - c) . grad p(c), the affine reducer."""
    c = p.center[None, :]
    coeffs = np.zeros(3)
    coeffs[0] = float(p.value(c)[0])
    coeffs[1] = float(p.partial(0).value(c)[0]) * p.scale
    coeffs[2] = float(p.partial(1).value(c)[0]) * p.scale
    return Poly2D(p.center, p.scale, 1, coeffs)


# -- rotation by the quarter-turn matrix A = [[0, -1], [1, 0]] ----------------


def conjugate_tensor(t: SymTensorPoly2D) -> SymTensorPoly2D:
    """tau -> A^T tau A = [[t22, -t12], [-t12, t11]]; an involution."""
    t11, t12, t22 = t.comps
    return SymTensorPoly2D((t22, -t12, t11))


def rotate_vector_ccw(v: VectorPoly2D) -> VectorPoly2D:
    """v -> A v = (-v2, v1)."""
    return VectorPoly2D((-v.comps[1], v.comps[0]))


def rotate_vector_cw(v: VectorPoly2D) -> VectorPoly2D:
    """v -> A^T v = (v2, -v1)."""
    return VectorPoly2D((v.comps[1], -v.comps[0]))


# -- bases of polynomial spaces ----------------------------------------------


def scalar_monomials(degree: int, center, scale: float) -> list:
    center = np.asarray(center, float)
    n = n_coeffs(degree)
    out = []
    for j in range(n):
        coeffs = np.zeros(n)
        coeffs[j] = 1.0
        out.append(Poly2D(center, float(scale), degree, coeffs))
    return out


def vector_monomials(degree: int, center, scale: float) -> list:
    mono = scalar_monomials(degree, center, scale)
    zero = Poly2D.zero(degree, center, scale)
    out = []
    for m in mono:
        out.append(VectorPoly2D((m, zero)))
        out.append(VectorPoly2D((zero, m)))
    return out


def sym_monomials(degree: int, center, scale: float) -> list:
    mono = scalar_monomials(degree, center, scale)
    zero = Poly2D.zero(degree, center, scale)
    out = []
    for m in mono:
        out.append(SymTensorPoly2D((m, zero, zero)))
        out.append(SymTensorPoly2D((zero, m, zero)))
        out.append(SymTensorPoly2D((zero, zero, m)))
    return out


def space_basis(tag: str, degree: int, center, scale: float) -> list:
    """Linearly independent spanning set of a named polynomial space.

    Tags and their meaning (d = degree argument):
      P, P_vec, P_sym      full polynomial spaces of degree d
      RT                   constants plus (x - c), dimension 3
      RM                   constants plus (x - c)^perp, dimension 3
      sym_curl_range       sym curl of vector polynomials of degree d+1,
                           dimension d^2 + 5d + 3
      xxt_range            (x-c)(x-c)^T q for q of degree d-2, dim d(d-1)/2
      hess_range           Hessians of scalar polynomials of degree d,
                           output degree d-2, dim = dim P_d - 3
      sym_xperp_range      sym((x-c)^perp otimes v) for vector v of degree d,
                           output degree d+1, dimension (d+1)(d+2)
      def_range            symmetric gradients of vector degree d+1
                           (rotation conjugate of sym_curl_range)
      xperp_xperpT_range   rotation conjugate of xxt_range
    """
    center = np.asarray(center, float)
    if tag == "P":
        return scalar_monomials(degree, center, scale)
    if tag == "P_vec":
        return vector_monomials(degree, center, scale)
    if tag == "P_sym":
        return sym_monomials(degree, center, scale)
    if tag == "RT":
        mono1 = scalar_monomials(1, center, scale)
        zero = Poly2D.zero(1, center, scale)
        return [VectorPoly2D((mono1[0], zero)), VectorPoly2D((zero, mono1[0])),
                VectorPoly2D((mono1[1], mono1[2]))]
    if tag == "RM":
        mono1 = scalar_monomials(1, center, scale)
        zero = Poly2D.zero(1, center, scale)
        return [VectorPoly2D((mono1[0], zero)), VectorPoly2D((zero, mono1[0])),
                VectorPoly2D((mono1[2], -mono1[1]))]
    if tag == "sym_curl_range":
        k = degree
        gens = _sym_curl_generators(k + 1, center, scale)
        return [sym_curl(g).pad(k) for g in gens]
    if tag == "xxt_range":
        k = degree
        if k < 2:
            return []
        return [xxT_mul(q).pad(k) for q in scalar_monomials(k - 2, center, scale)]
    if tag == "hess_range":
        m = degree
        if m < 2:
            return []
        out = []
        for j in range(3, n_coeffs(m)):
            coeffs = np.zeros(n_coeffs(m))
            coeffs[j] = 1.0
            out.append(hess(Poly2D(center, scale, m, coeffs)))
        return out
    if tag == "sym_xperp_range":
        m = degree
        if m < 0:
            return []
        return [sym_xperp_outer(v) for v in vector_monomials(m, center, scale)]
    if tag == "def_range":
        return [conjugate_tensor(t)
                for t in space_basis("sym_curl_range", degree, center, scale)]
    if tag == "xperp_xperpT_range":
        return [conjugate_tensor(t)
                for t in space_basis("xxt_range", degree, center, scale)]
    raise ValueError(f"unknown space tag {tag!r}")


def _sym_curl_generators(degree: int, center, scale: float) -> list:
    """Complement of the rigid kernel of sym curl inside vector P_degree.

    Drops both constants and one linear monomial so that the remaining
    linear span is transversal to span{(1,0), (0,1), (x1, x2)}.
    """
    mono = scalar_monomials(degree, center, scale)
    zero = Poly2D.zero(degree, center, scale)
    gens = []
    # degree-1 part: (X, 0), (Y, 0), (0, X); (0, Y) is dropped
    for coeffs_idx, comp in (((1,), 0), ((2,), 0), ((1,), 1)):
        c = np.zeros(n_coeffs(degree))
        c[coeffs_idx[0]] = 1.0
        p = Poly2D(center, scale, degree, c)
        gens.append(VectorPoly2D((p, zero)) if comp == 0 else VectorPoly2D((zero, p)))
    for j in range(3, n_coeffs(degree)):
        m = mono[j]
        gens.append(VectorPoly2D((m, zero)))
        gens.append(VectorPoly2D((zero, m)))
    return gens


def stack_coeffs(polys) -> np.ndarray:
    """Rows are the stacked coefficient vectors of the given polynomials."""
    if not polys:
        return np.zeros((0, 0))
    rows = [p.coeffs if isinstance(p, Poly2D) else p.stacked_coeffs() for p in polys]
    return np.vstack(rows)


def pad_all(polys, degree: int) -> list:
    return [p.pad(degree) for p in polys]


def split_decomposition(t: SymTensorPoly2D, k: int):
    """Split tau of degree <= k into its sym-curl-range and xxt-range parts."""
    if k < 2:
        raise ValueError("need k >= 2 for the splitting")
    bc = space_basis("sym_curl_range", k, t.center, t.scale)
    bp = space_basis("xxt_range", k, t.center, t.scale)
    A = stack_coeffs(bc + bp).T
    rhs = t.pad(k).stacked_coeffs()
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    resid = np.linalg.norm(A @ sol - rhs)
    norm = max(np.linalg.norm(rhs), 1e-30)
    if resid > 1e-10 * max(norm, 1.0):
        raise RuntimeError(
            f"direct splitting failed, residual {resid:.2e}; basis bug")
    tc = _combine(bc, sol[: len(bc)], k, t.center, t.scale)
    tp = _combine(bp, sol[len(bc):], k, t.center, t.scale)
    return tc, tp


def _combine(basis, weights, degree, center, scale) -> SymTensorPoly2D:
    nc = n_coeffs(degree)
    acc = np.zeros(3 * nc)
    for w, b in zip(weights, basis):
        acc += w * b.pad(degree).stacked_coeffs()
    comps = tuple(Poly2D(center, scale, degree, acc[i * nc:(i + 1) * nc])
                  for i in range(3))
    return SymTensorPoly2D(comps)


# -- quadrature ---------------------------------------------------------------


@lru_cache(maxsize=None)
def gauss_01(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = npleg.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def reference_triangle_rule(degree: int):
    """Rule on the unit reference triangle exact for polynomials of the
    given total degree (collapsed-square tensor Gauss)."""
    n = max((degree + 2 + 1) // 2, 1)
    u, wu = gauss_01(n)
    v, wv = gauss_01(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    x = U
    y = V * (1.0 - U)
    w = WU * WV * (1.0 - U)
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    pts.setflags(write=False)
    w = w.ravel()
    w.setflags(write=False)
    return pts, w


def triangle_quadrature(verts, degree: int):
    """Physical points and weights on the triangle, exact to `degree`."""
    verts = np.asarray(verts, float)
    ref, w = reference_triangle_rule(degree)
    a = verts[0]
    J = np.stack([verts[1] - a, verts[2] - a], axis=1)
    pts = a + ref @ J.T
    area2 = abs(np.linalg.det(J))
    return pts, w * area2


def edge_quadrature(a, b, degree: int):
    """Gauss points and arclength weights on the segment from a to b."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n = max((degree + 1 + 1) // 2, 1)
    x, w = gauss_pm1(n)
    pts = 0.5 * (a + b) + 0.5 * np.outer(x, b - a)
    length = np.linalg.norm(b - a)
    return pts, 0.5 * length * w


def integrate_triangle(f, verts, degree: int | None = None) -> float:
    """Integral over the triangle; `f` is a Poly2D or a callable on points."""
    if isinstance(f, Poly2D):
        degree = f.degree if degree is None else degree
        pts, w = triangle_quadrature(verts, degree)
        return float(w @ f.value(pts))
    if degree is None:
        raise ValueError("a quadrature degree is required for callables")
    pts, w = triangle_quadrature(verts, degree)
    return float(w @ np.asarray(f(pts), float))


def integrate_edge(f, a, b, degree: int | None = None) -> float:
    """Integral over the segment; `f` is a Poly2D or a callable on points."""
    if isinstance(f, Poly2D):
        degree = f.degree if degree is None else degree
        pts, w = edge_quadrature(a, b, degree)
        return float(w @ f.value(pts))
    if degree is None:
        raise ValueError("a quadrature degree is required for callables")
    pts, w = edge_quadrature(a, b, degree)
    return float(w @ np.asarray(f(pts), float))


def orthonormal_legendre(xi: np.ndarray, n: int, length: float) -> np.ndarray:
    """(n, len(xi)) values of the first n Legendre polynomials on [-1, 1],
    normalized to unit L2 norm with respect to arclength on an edge of the
    given length."""
    if n == 0:
        return np.zeros((0, len(xi)))
    vals = npleg.legvander(xi, n - 1).T
    fac = np.sqrt((2.0 * np.arange(n) + 1.0) / length)
    return vals * fac[:, None]


SYM_METRIC = np.array([1.0, 2.0, 1.0])  # Frobenius weights for (11, 12, 22)


def gram_matrix(polys, verts) -> np.ndarray:
    """Exact L2 Gram matrix of scalar/vector/tensor polynomials on a triangle."""
    if not polys:
        return np.zeros((0, 0))
    deg = max(p.degree for p in polys)
    pts, w = triangle_quadrature(verts, 2 * deg)
    if isinstance(polys[0], Poly2D):
        V = np.stack([p.value(pts) for p in polys])
        return np.einsum("iq,jq,q->ij", V, V, w)
    V = np.stack([p.value(pts) for p in polys])  # (n, q, ncomp)
    metric = SYM_METRIC if V.shape[2] == 3 else np.ones(V.shape[2])
    return np.einsum("iqc,jqc,c,q->ij", V, V, metric, w)


def orthonormal_cell_basis(degree: int, verts) -> list:
    """L2-orthonormal scalar basis on the triangle (centered monomials put
    through a Cholesky factorization of their Gram matrix)."""
    verts = np.asarray(verts, float)
    center = verts.mean(axis=0)
    scale = max(np.linalg.norm(verts[i] - verts[j]) for i in range(3) for j in range(i))
    mono = scalar_monomials(degree, center, scale)
    G = gram_matrix(mono, verts)
    L = np.linalg.cholesky(G)
    C = np.linalg.inv(L)
    out = []
    for i in range(len(mono)):
        coeffs = C[i] @ np.stack([m.coeffs for m in mono])
        out.append(Poly2D(center, scale, degree, coeffs))
    return out


# -- edge traces and the integration-by-parts identity ------------------------


def nn_trace_poly(t: SymTensorPoly2D, n) -> Poly2D:
    """The bivariate polynomial n^T tau n for a fixed unit vector n."""
    n1, n2 = float(n[0]), float(n[1])
    t11, t12, t22 = t.comps
    return t11 * (n1 * n1) + t12 * (2.0 * n1 * n2) + t22 * (n2 * n2)


def shear_trace_poly(t: SymTensorPoly2D, n, tv) -> Poly2D:
    """The effective transverse shear d_t(t^T tau n) + n . div tau for fixed
    unit normal n and tangent tv (constant along an edge)."""
    n1, n2 = float(n[0]), float(n[1])
    t1, t2 = float(tv[0]), float(tv[1])
    t11, t12, t22 = t.comps
    ttn = t11 * (t1 * n1) + t12 * (t1 * n2 + t2 * n1) + t22 * (t2 * n2)
    dt = directional_derivative(ttn, tv)
    dv = div_tensor(t)
    ndiv = dv.comps[0] * n1 + dv.comps[1] * n2
    return dt + ndiv


def greens_identity_residual(t: SymTensorPoly2D, v: Poly2D, verts) -> float:
    """Residual of the integration-by-parts identity linking div div tau
    against v with cell terms, corner terms, and the two edge traces."""
    verts = np.asarray(verts, float)
    lhs = integrate_triangle(divdiv(t) * v, verts)
    hv = hess(v)
    pts, w = triangle_quadrature(verts, t.degree + max(v.degree - 2, 0))
    tv_vals = t.value(pts)
    hv_vals = hv.value(pts)
    rhs = float(np.einsum("qc,qc,c,q->", tv_vals, hv_vals, SYM_METRIC, w))
    for i in range(3):
        a, b = verts[i], verts[(i + 1) % 3]
        tangent = (b - a) / np.linalg.norm(b - a)
        normal = np.array([tangent[1], -tangent[0]])  # outward for CCW cells
        ttn = (t.comps[0] * (tangent[0] * normal[0])
               + t.comps[1] * (tangent[0] * normal[1] + tangent[1] * normal[0])
               + t.comps[2] * (tangent[1] * normal[1]))
        # corner terms: +1 at the end point, -1 at the start point
        rhs -= float(ttn.value(b[None, :])[0] * v.value(b[None, :])[0])
        rhs += float(ttn.value(a[None, :])[0] * v.value(a[None, :])[0])
        nn = nn_trace_poly(t, normal)
        dnv = directional_derivative(v, normal)
        rhs -= integrate_edge(nn * dnv, a, b)
        shear = shear_trace_poly(t, normal, tangent)
        rhs += integrate_edge(shear * v, a, b)
    scale = max(abs(lhs), abs(rhs), 1.0)
    return abs(lhs - rhs) / scale


# -- smooth field wrappers -----------------------------------------------------


class TensorField:
    """Symmetric tensor field given by callables: value (N,2)->(N,3) in the
    order (11, 12, 22), and optionally grad (N,2)->(N,3,2)."""

    def __init__(self, value, grad=None, degree=None):
        self.value = value
        self.grad = grad
        self.degree = degree


class VectorField:
    """Vector field given by callables: value (N,2)->(N,2), jacobian
    (N,2)->(N,2,2), optionally hessian (N,2)->(N,2,2,2)."""

    def __init__(self, value, jacobian=None, hessian=None, degree=None):
        self.value = value
        self.jacobian = jacobian
        self.hessian = hessian
        self.degree = degree


def as_tensor_field(obj) -> TensorField:
    if isinstance(obj, TensorField):
        return obj
    if isinstance(obj, SymTensorPoly2D):
        return TensorField(obj.value, obj.grad_values, degree=obj.degree)
    raise TypeError(f"cannot interpret {type(obj).__name__} as a tensor field")


def as_vector_field(obj) -> VectorField:
    if isinstance(obj, VectorField):
        return obj
    if isinstance(obj, VectorPoly2D):
        def hess_vals(pts):
            out = []
            for c in obj.comps:
                h = hess(c).value(pts)  # (N, 3) in the order (11, 12, 22)
                out.append(np.stack([h[:, [0, 1]], h[:, [1, 2]]], axis=1))
            return np.stack(out, axis=1)  # (N, comp, d, e)
        return VectorField(obj.value, obj.jacobian, hess_vals, degree=obj.degree)
    raise TypeError(f"cannot interpret {type(obj).__name__} as a vector field")


def sym_curl_field(vf: VectorField) -> TensorField:
    """Tensor field sym curl v built from a vector field's derivatives."""
    vf = as_vector_field(vf)
    if vf.jacobian is None:
        raise ValueError("sym curl of a callable field needs its jacobian")

    def value(pts):
        J = np.asarray(vf.jacobian(pts), float)
        return np.stack(
            [J[:, 0, 1], 0.5 * (J[:, 1, 1] - J[:, 0, 0]), -J[:, 1, 0]], axis=-1)

    gradf = None
    if vf.hessian is not None:
        def gradf(pts):
            H = np.asarray(vf.hessian(pts), float)  # (N, comp, d, e)
            return np.stack(
                [H[:, 0, 1, :], 0.5 * (H[:, 1, 1, :] - H[:, 0, 0, :]), -H[:, 1, 0, :]],
                axis=1)

    deg = None if vf.degree is None else max(vf.degree - 1, 0)
    return TensorField(value, gradf, degree=deg)


def conjugate_tensor_field(tf: TensorField) -> TensorField:
    """Pointwise map tau -> A^T tau A on a tensor field."""
    tf = as_tensor_field(tf)

    def value(pts):
        v = np.asarray(tf.value(pts), float)
        return np.stack([v[:, 2], -v[:, 1], v[:, 0]], axis=-1)

    gradf = None
    if tf.grad is not None:
        def gradf(pts):
            g = np.asarray(tf.grad(pts), float)
            return np.stack([g[:, 2], -g[:, 1], g[:, 0]], axis=1)

    return TensorField(value, gradf, degree=tf.degree)


def rotate_vector_field_cw(vf: VectorField) -> VectorField:
    """Pointwise map v -> A^T v = (v2, -v1) on a vector field."""
    vf = as_vector_field(vf)

    def value(pts):
        v = np.asarray(vf.value(pts), float)
        return np.stack([v[:, 1], -v[:, 0]], axis=-1)

    jac = None
    if vf.jacobian is not None:
        def jac(pts):
            J = np.asarray(vf.jacobian(pts), float)
            return np.stack([J[:, 1], -J[:, 0]], axis=1)

    hs = None
    if vf.hessian is not None:
        def hs(pts):
            H = np.asarray(vf.hessian(pts), float)
            return np.stack([H[:, 1], -H[:, 0]], axis=1)

    return VectorField(value, jac, hs, degree=vf.degree)
