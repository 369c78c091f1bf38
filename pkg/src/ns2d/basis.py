"""Reference-element machinery: quadrature rules, modal and nodal bases.

Everything here lives on the unit reference triangle

    T = {(x, y) : x >= 0, y >= 0, x + y <= 1}

with vertices v0=(0,0), v1=(1,0), v2=(0,1), or on the unit edge [0,1].
Physical elements are affine images of T; see `map_to_physical`.

The modal basis is the orthonormal Dubiner family built from Jacobi
polynomials in collapsed coordinates.  It is hierarchical by total degree
and its mass matrix under exact quadrature is the identity, so broken
(element-wise) mass matrices are diagonal.
"""

import math

import numpy as np
from scipy.special import gammaln, roots_jacobi

MAX_MODAL_DEGREE = 4
MAX_TRI_QUAD_DEGREE = 12
MAX_EDGE_QUAD_DEGREE = 25


def triangle_quadrature(degree):
    """Quadrature on the reference triangle, exact for polynomials of
    total degree <= `degree`.

    Built from a Duffy (collapsed-coordinate) tensor rule: Gauss-Jacobi
    (alpha=1) in the collapsed direction absorbs the Jacobian factor, so
    exactness is guaranteed by construction rather than by table lookup.

    Returns (points, weights): points (n, 2), weights (n,) summing to 1/2.
    """
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if degree > MAX_TRI_QUAD_DEGREE:
        raise ValueError(
            f"triangle quadrature degree {degree} exceeds supported maximum "
            f"{MAX_TRI_QUAD_DEGREE}")
    n = max(1, (degree + 2) // 2)  # n-point Gauss is exact to degree 2n-1
    # Gauss-Legendre on [0,1] for the eta direction.
    xg, wg = np.polynomial.legendre.leggauss(n)
    eta = 0.5 * (xg + 1.0)
    weta = 0.5 * wg
    # Gauss-Jacobi with weight (1-x) on [-1,1], mapped to weight (1-xi) on [0,1].
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xi = 0.5 * (xj + 1.0)
    wxi = 0.25 * wj  # d(xi) = dx/2 and the weight (1-x) = 2(1-xi) absorbs a 2
    # Duffy map (xi, eta) -> (x, y) = (xi, eta (1 - xi)), Jacobian (1 - xi).
    X = np.repeat(xi, n)
    Y = np.tile(eta, n) * (1.0 - X)
    W = np.repeat(wxi, n) * np.tile(weta, n)
    pts = np.column_stack([X, Y])
    return pts, W


def edge_quadrature(degree):
    """Gauss-Legendre quadrature on [0,1], exact to polynomial `degree`.

    Returns (nodes, weights) with weights summing to 1.
    """
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if degree > MAX_EDGE_QUAD_DEGREE:
        raise ValueError(
            f"edge quadrature degree {degree} exceeds supported maximum "
            f"{MAX_EDGE_QUAD_DEGREE}")
    n = max(1, (degree + 2) // 2)
    xg, wg = np.polynomial.legendre.leggauss(n)
    return 0.5 * (xg + 1.0), 0.5 * wg


def _jacobi_norm(n, alpha, beta):
    # L2 norm^2 of the classical Jacobi polynomial P_n^(alpha,beta) on [-1,1]
    # against the weight (1-x)^alpha (1+x)^beta.
    num = gammaln(n + alpha + 1) + gammaln(n + beta + 1)
    den = gammaln(n + alpha + beta + 1) + gammaln(n + 1)
    return (2.0 ** (alpha + beta + 1) / (2 * n + alpha + beta + 1)
            * math.exp(num - den))


def _jacobi(x, n, alpha, beta):
    # Orthonormal Jacobi polynomial, evaluated by the three-term recurrence
    # on the classical normalization and rescaled at the end.
    x = np.asarray(x, dtype=float)
    if n == 0:
        p = np.ones_like(x)
    elif n == 1:
        p = 0.5 * (alpha - beta + (alpha + beta + 2) * x)
    else:
        pm, p = np.ones_like(x), 0.5 * (alpha - beta + (alpha + beta + 2) * x)
        for k in range(1, n):
            a = 2 * (k + 1) * (k + alpha + beta + 1) * (2 * k + alpha + beta)
            b = (2 * k + alpha + beta + 1) * (alpha ** 2 - beta ** 2)
            c = ((2 * k + alpha + beta) * (2 * k + alpha + beta + 1)
                 * (2 * k + alpha + beta + 2))
            d = 2 * (k + alpha) * (k + beta) * (2 * k + alpha + beta + 2)
            pm, p = p, ((b + c * x) * p - d * pm) / a
    return p / math.sqrt(_jacobi_norm(n, alpha, beta))


def _jacobi_deriv(x, n, alpha, beta):
    # Derivative of the orthonormal Jacobi polynomial.
    if n == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return (math.sqrt(n * (n + alpha + beta + 1))
            * _jacobi(x, n - 1, alpha + 1, beta + 1))


def _collapsed(r, s):
    # Collapsed coordinates on the (-1,-1),(1,-1),(-1,1) triangle; the
    # degenerate top vertex s=1 maps to a=-1 (removable limit).
    a = np.full_like(r, -1.0)
    ok = np.abs(1.0 - s) > 1e-13
    a[ok] = 2.0 * (1.0 + r[ok]) / (1.0 - s[ok]) - 1.0
    return a, s


class ModalBasis:
    """Orthonormal Dubiner basis of total degree <= `degree` on T.

    Modes are ordered by total degree; mode 0 is the constant sqrt(2).
    """

    def __init__(self, degree):
        if degree < 0:
            raise ValueError("basis degree must be nonnegative")
        if degree > MAX_MODAL_DEGREE:
            raise ValueError(
                f"modal basis degree {degree} exceeds supported maximum "
                f"{MAX_MODAL_DEGREE}")
        self.degree = degree
        self.index = [(d - j, j) for d in range(degree + 1)
                      for j in range(d + 1)]
        self.n_modes = len(self.index)

    def eval(self, pts):
        """Mode values at reference points; returns (npts, n_modes)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        r = 2.0 * pts[:, 0] - 1.0
        s = 2.0 * pts[:, 1] - 1.0
        a, b = _collapsed(r, s)
        out = np.empty((len(pts), self.n_modes))
        for m, (i, j) in enumerate(self.index):
            fa = _jacobi(a, i, 0.0, 0.0)
            gb = _jacobi(b, j, 2 * i + 1.0, 0.0)
            # factor 2: orthonormal on the unit triangle, not the (-1,1) one
            out[:, m] = 2.0 * math.sqrt(2.0) * fa * gb * (1.0 - b) ** i
        return out

    def grad(self, pts):
        """Mode gradients at reference points; returns (npts, n_modes, 2)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        r = 2.0 * pts[:, 0] - 1.0
        s = 2.0 * pts[:, 1] - 1.0
        a, b = _collapsed(r, s)
        out = np.empty((len(pts), self.n_modes, 2))
        for m, (i, j) in enumerate(self.index):
            fa = _jacobi(a, i, 0.0, 0.0)
            dfa = _jacobi_deriv(a, i, 0.0, 0.0)
            gb = _jacobi(b, j, 2 * i + 1.0, 0.0)
            dgb = _jacobi_deriv(b, j, 2 * i + 1.0, 0.0)
            half1mb = 0.5 * (1.0 - b)
            pw = half1mb ** (i - 1) if i > 0 else np.ones_like(b)
            dmdr = dfa * gb * pw
            dmds = dfa * gb * pw * 0.5 * (1.0 + a)
            tmp = dgb * half1mb ** i
            if i > 0:
                tmp = tmp - 0.5 * i * gb * pw
            dmds = dmds + fa * tmp
            scale = 2.0 ** (i + 0.5)
            # chain rule: d/dx = 2 d/dr on top of the reference rescaling,
            # and the basis carries the extra factor 2 for unit-triangle norm
            out[:, m, 0] = 4.0 * scale * dmdr
            out[:, m, 1] = 4.0 * scale * dmds
        return out


def orthonormal_basis(degree):
    """Orthonormal modal basis of total degree <= `degree` (degree <= 4)."""
    return ModalBasis(degree)


def lagrange_nodes(degree):
    """Equispaced lattice nodes on T for the P_degree Lagrange basis.

    Returns (nodes, kinds): nodes (nloc, 2); kinds is a list of tuples
    classifying each node as ('vertex', v), ('edge', e, t) with t the
    1-based position along local edge e traversed in triangle order, or
    ('interior', idx).  Local edges are 0:(v0,v1), 1:(v1,v2), 2:(v2,v0).
    """
    if degree < 1:
        raise ValueError("Lagrange degree must be >= 1")
    nodes, kinds = [], []
    n_int = 0
    for j in range(degree + 1):
        for i in range(degree + 1 - j):
            nodes.append((i / degree, j / degree))
            corner = {(0, 0): 0, (degree, 0): 1, (0, degree): 2}
            if (i, j) in corner:
                kinds.append(('vertex', corner[(i, j)]))
            elif j == 0:
                kinds.append(('edge', 0, i))
            elif i + j == degree:
                kinds.append(('edge', 1, j))
            elif i == 0:
                kinds.append(('edge', 2, degree - j))
            else:
                kinds.append(('interior', n_int))
                n_int += 1
    return np.array(nodes), kinds


class NodalBasis:
    """Lagrange basis on the equispaced lattice, built by inverting the
    modal Vandermonde matrix (well conditioned for degree <= 4)."""

    def __init__(self, degree):
        self.degree = degree
        self.modal = ModalBasis(degree)
        self.nodes, self.node_kinds = lagrange_nodes(degree)
        self.n_modes = self.modal.n_modes
        V = self.modal.eval(self.nodes)
        self._winv = np.linalg.inv(V)

    def eval(self, pts):
        return self.modal.eval(pts) @ self._winv

    def grad(self, pts):
        g = self.modal.grad(pts)
        return np.einsum('pmd,mi->pid', g, self._winv)


def map_to_physical(verts, ref_pts):
    """Affine map from the reference triangle to the triangle with vertex
    coordinates `verts` ((3, 2), CCW).

    Returns (phys_pts, jac, det): phys_pts (n, 2); jac the constant 2x2
    Jacobian d(phys)/d(ref); det its (positive) determinant.  The physical
    triangle area is det/2.
    """
    verts = np.asarray(verts, dtype=float)
    ref_pts = np.atleast_2d(np.asarray(ref_pts, dtype=float))
    jac = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    phys = verts[0] + ref_pts @ jac.T
    return phys, jac, det
