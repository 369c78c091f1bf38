"""Scalar and vector finite element spaces on triangle meshes.

Two families are supported on a common interface:

* ``'dg'``: fully discontinuous, spanned element-wise by the orthonormal
  modal basis.  The mass matrix is diagonal (det J per element).
* ``'cg'``: H1-conforming Lagrange elements on the equispaced lattice,
  with shared vertex and edge nodes.

Fields are represented as plain coefficient vectors (numpy arrays); every
operation takes the owning space explicitly.  Vector spaces interleave or
block components as follows: DG dof = (elem*ncomp + comp)*nb + mode, CG
dof = node*ncomp + comp.

The field dump format is CSV with columns
``element,refx,refy,physx,physy,value...`` (one value column per
component), sampling each element on its reference lattice.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import (ModalBasis, NodalBasis, edge_quadrature,
                    triangle_quadrature)
from .mesh import extract_faces


class VolumeTables:
    """Per-element quadrature and basis tables for one space.

    Arrays: w (nq,), pts (nq, 2) reference points, phi (nq, nb),
    detj (T,), jac_inv (T, 2, 2) mapping physical to reference
    derivatives, phys (T, nq, 2), grad (T, nq, nb, 2) physical basis
    gradients, w_phys (T, nq) quadrature weights times det J.
    """

    def __init__(self, space, qdeg):
        mesh = space.mesh
        self.pts, self.w = triangle_quadrature(qdeg)
        self.phi = space.basis.eval(self.pts)
        dphi = space.basis.grad(self.pts)
        v = mesh.vertices[mesh.triangles]
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        self.detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
        self.jac_inv = inv / self.detj[:, None, None]
        self.phys = v[:, None, 0, :] + np.einsum(
            'qr,erd->eqd', self.pts, jac.transpose(0, 2, 1))
        # d/dx_i = sum_r (dref_r/dx_i) d/dref_r, with jac_inv = dref/dphys
        self.grad = np.einsum('qmr,eri->eqmi', dphi, self.jac_inv)
        self.w_phys = self.w[None, :] * self.detj[:, None]


class FaceTables:
    """Per-face quadrature and trace tables for a (DG) space.

    Interior faces: elem_plus/elem_minus adjacency, unit normals from
    plus to minus, traces (phi_p, phi_m) of shape (nfi, nq, nb) and
    physical trace gradients (gp, gm) of shape (nfi, nq, nb, 2).
    Boundary faces: single-sided tables, outward normals, tags, and the
    physical quadrature points (for boundary data evaluation).
    Weights wq already include the face length.
    """

    def __init__(self, space, qdeg):
        topo = space.topo
        mesh = space.mesh
        s, w = edge_quadrature(qdeg)
        self.s = s
        self.nq = len(s)
        A = mesh.vertices[topo.va]
        B = mesh.vertices[topo.vb]
        phys = A[:, None, :] + s[None, :, None] * (B - A)[:, None, :]
        v0 = mesh.vertices[mesh.triangles[:, 0]]
        tabs = space.volume_tables(2)  # only jac_inv is needed; cheap rule

        jinv = tabs.jac_inv

        def ref_coords(elems, x):
            d = x - v0[elems][:, None, :]
            return np.einsum('fqd,fdr->fqr', d, jinv[elems].transpose(0, 2, 1))

        i = topo.interior
        b = topo.boundary
        self.int_plus = topo.elem_plus[i]
        self.int_minus = topo.elem_minus[i]
        self.int_normal = topo.normal[i]
        self.int_h = topo.h_f[i]
        self.int_wq = w[None, :] * topo.h_f[i][:, None]
        rp = ref_coords(self.int_plus, phys[i])
        rm = ref_coords(self.int_minus, phys[i])
        self.phi_p, self.gp = self._trace(space, rp, self.int_plus, jinv)
        self.phi_m, self.gm = self._trace(space, rm, self.int_minus, jinv)
        self.bnd_elem = topo.elem_plus[b]
        self.bnd_normal = topo.normal[b]
        self.bnd_h = topo.h_f[b]
        self.bnd_wq = w[None, :] * topo.h_f[b][:, None]
        self.bnd_phys = phys[b]
        self.bnd_tags = [topo.tags[f] for f in b]
        rb = ref_coords(self.bnd_elem, phys[b])
        self.phi_b, self.gb = self._trace(space, rb, self.bnd_elem, jinv)

    @staticmethod
    def _trace(space, ref, elems, jinv):
        nf, nq, _ = ref.shape
        flat = ref.reshape(-1, 2)
        phi = space.basis.eval(flat).reshape(nf, nq, -1)
        dphi = space.basis.grad(flat).reshape(nf, nq, space.nb, 2)
        g = np.einsum('fqmr,fri->fqmi', dphi, jinv[elems])
        return phi, g


class FunctionSpace:
    """A broken ('dg') or conforming ('cg') polynomial space.

    Attributes
    ----------
    family : 'dg' or 'cg'
    degree : polynomial degree
    ncomp : number of vector components (1 or 2)
    nb : local scalar basis size
    n_scalar : scalar dof count; ndof = n_scalar * ncomp
    edofs : (T, ncomp, nb) global dof indices per element
    """

    def __init__(self, mesh, family, degree, ncomp=1, topo=None):
        if family not in ('dg', 'cg'):
            raise ValueError(f"unknown space family {family!r}")
        if ncomp not in (1, 2):
            raise ValueError("ncomp must be 1 or 2")
        if family == 'cg' and degree < 1:
            raise ValueError("cg spaces need degree >= 1")
        self.mesh = mesh
        self.topo = topo if topo is not None else extract_faces(mesh)
        self.family = family
        self.degree = degree
        self.ncomp = ncomp
        T = mesh.n_triangles
        if family == 'dg':
            self.basis = ModalBasis(degree)
            self.nb = self.basis.n_modes
            self.n_scalar = T * self.nb
            g = np.arange(T * ncomp * self.nb, dtype=np.int32)
            self.edofs = g.reshape(T, ncomp, self.nb)
        else:
            self.basis = NodalBasis(degree)
            self.nb = self.basis.n_modes
            self._number_cg_nodes()
            g = (self.elem_nodes[:, None, :] * ncomp
                 + np.arange(ncomp)[None, :, None])
            self.edofs = g.astype(np.int32)
        self.ndof = self.n_scalar * ncomp
        self._vt = {}
        self._ft = {}

    def _number_cg_nodes(self):
        mesh, topo = self.mesh, self.topo
        deg = self.degree
        per_edge = deg - 1
        n_int = (deg - 1) * (deg - 2) // 2
        V, T, F = mesh.n_vertices, mesh.n_triangles, topo.n_faces
        self.n_scalar = V + F * per_edge + T * n_int
        int_off = V + F * per_edge
        kinds = self.basis.node_kinds
        en = np.empty((T, self.nb), dtype=np.int64)
        tri = mesh.triangles
        for t in range(T):
            for ln, kind in enumerate(kinds):
                if kind[0] == 'vertex':
                    en[t, ln] = tri[t, kind[1]]
                elif kind[0] == 'edge':
                    le, pos = kind[1], kind[2]
                    f = topo.cell_faces[t, le]
                    a = tri[t, le]
                    lo = min(topo.va[f], topo.vb[f])
                    fwd = (a == lo)
                    p = pos if fwd else deg - pos
                    en[t, ln] = V + f * per_edge + (p - 1)
                else:
                    en[t, ln] = int_off + t * n_int + kind[1]
        self.elem_nodes = en
        coords = np.empty((self.n_scalar, 2))
        ref = self.basis.nodes
        v = mesh.vertices[tri]
        phys = (v[:, None, 0, :]
                + np.einsum('nr,trd->tnd', ref,
                            np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]],
                                     axis=1)))
        for t in range(T):
            coords[en[t]] = phys[t]
        self.node_coords = coords
        bset = {}
        for f in topo.boundary:
            tag = topo.tags[f]
            nodes = [int(topo.va[f]), int(topo.vb[f])]
            nodes += [V + f * per_edge + i for i in range(per_edge)]
            for n in nodes:
                bset.setdefault(n, tag)
        self.boundary_nodes = np.array(sorted(bset), dtype=np.int64)
        self.boundary_node_tags = [bset[n] for n in self.boundary_nodes]

    def boundary_dofs(self):
        """Global dof indices of all boundary nodes (cg only), all
        components, with matching node coordinates and tags."""
        if self.family != 'cg':
            raise ValueError("boundary dofs are defined for cg spaces")
        nodes = self.boundary_nodes
        dofs = (nodes[:, None] * self.ncomp
                + np.arange(self.ncomp)[None, :]).ravel()
        coords = np.repeat(self.node_coords[nodes], self.ncomp, axis=0)
        comps = np.tile(np.arange(self.ncomp), len(nodes))
        tags = [t for t in self.boundary_node_tags for _ in range(self.ncomp)]
        return dofs, coords, comps, tags

    def volume_tables(self, qdeg):
        if qdeg not in self._vt:
            self._vt[qdeg] = VolumeTables(self, qdeg)
        return self._vt[qdeg]

    def face_tables(self, qdeg):
        if qdeg not in self._ft:
            self._ft[qdeg] = FaceTables(self, qdeg)
        return self._ft[qdeg]

    def default_quad(self):
        """Default volume quadrature degree: 3 times the space degree,
        capped at the supported maximum."""
        return min(12, max(2, 3 * self.degree))

    def scalar_mass(self):
        """Sparse scalar mass matrix (n_scalar x n_scalar)."""
        vt = self.volume_tables(min(12, 2 * self.degree + 2))
        em = np.einsum('eq,qa,qb->eab', vt.w_phys, vt.phi, vt.phi)
        if self.family == 'dg':
            rows = np.arange(self.n_scalar).reshape(-1, self.nb)
        else:
            rows = self.elem_nodes
        r = np.repeat(rows[:, :, None], self.nb, axis=2)
        c = np.repeat(rows[:, None, :], self.nb, axis=1)
        M = sp.coo_matrix((em.ravel(), (r.ravel(), c.ravel())),
                          shape=(self.n_scalar, self.n_scalar))
        return M.tocsr()


def build_space(mesh, family, degree, ncomp=1, topo=None):
    """Build a function space; `family` is 'dg' or 'cg'."""
    return FunctionSpace(mesh, family, degree, ncomp, topo)


def _call_exact(f, pts, ncomp):
    vals = np.asarray(f(pts), dtype=float)
    if ncomp == 1:
        return vals.reshape(len(pts))
    if vals.shape == (len(pts), ncomp):
        return vals
    return vals.reshape(len(pts), ncomp)


def l2_project(space, f, qdeg=None):
    """L2 projection of the callable f(pts) onto the space.

    f maps (n, 2) physical points to (n,) or (n, ncomp) values.
    """
    if qdeg is None:
        qdeg = min(12, 2 * space.degree + 4)
    vt = space.volume_tables(qdeg)
    T, nq = space.mesh.n_triangles, len(vt.w)
    fv = _call_exact(f, vt.phys.reshape(-1, 2), space.ncomp)
    fv = fv.reshape(T, nq, space.ncomp) if space.ncomp > 1 else \
        fv.reshape(T, nq, 1)
    rhs_e = np.einsum('eq,qm,eqc->ecm', vt.w_phys, vt.phi, fv)
    out = np.zeros(space.ndof)
    if space.family == 'dg':
        out = (rhs_e / vt.detj[:, None, None]).ravel()
        return out
    rhs = np.zeros((space.n_scalar, space.ncomp))
    for c in range(space.ncomp):
        np.add.at(rhs[:, c], space.elem_nodes.ravel(),
                  rhs_e[:, c, :].ravel())
    M = space.scalar_mass()
    lu = spla.splu(M.tocsc())
    sol = np.column_stack([lu.solve(rhs[:, c])
                           for c in range(space.ncomp)])
    return sol.ravel()


def _field_at_quad(space, coeffs, vt):
    """Field values at the volume quadrature points, (T, nq, ncomp)."""
    C = coeffs.reshape(-1)[space.edofs]
    return np.einsum('qm,ecm->eqc', vt.phi, C)


def _grad_at_quad(space, coeffs, vt):
    """Field gradients at quadrature points, (T, nq, ncomp, 2)."""
    C = coeffs.reshape(-1)[space.edofs]
    return np.einsum('eqmi,ecm->eqci', vt.grad, C)


def mean_value(space, coeffs):
    """Domain mean of the field; scalar for ncomp=1, else (ncomp,)."""
    vt = space.volume_tables(min(12, 2 * space.degree))
    vals = _field_at_quad(space, coeffs, vt)
    area = 0.5 * vt.detj.sum()
    m = np.einsum('eq,eqc->c', vt.w_phys, vals) / area
    return float(m[0]) if space.ncomp == 1 else m


def l2_error(space, coeffs, f, qdeg=None, zero_mean=False):
    """L2 norm of (field - f) over the domain.

    With zero_mean=True both the discrete field and f are shifted to zero
    mean first (the pressure convention for fields defined up to a
    constant).  f maps (n, 2) points to values; pass f=None to get the
    plain L2 norm of the field.
    """
    if qdeg is None:
        qdeg = min(12, 2 * (space.degree + 1) + 2)
    vt = space.volume_tables(qdeg)
    T, nq = space.mesh.n_triangles, len(vt.w)
    vals = _field_at_quad(space, coeffs, vt)
    if f is not None:
        fv = _call_exact(f, vt.phys.reshape(-1, 2), space.ncomp)
        fv = fv.reshape(T, nq, -1)
    else:
        fv = np.zeros_like(vals)
    diff = vals - fv
    if zero_mean:
        area = 0.5 * vt.detj.sum()
        shift = np.einsum('eq,eqc->c', vt.w_phys, diff) / area
        diff = diff - shift
    return float(np.sqrt(np.einsum('eq,eqc->', vt.w_phys, diff ** 2)))


def eval_field(space, coeffs, elems, ref_pts):
    """Evaluate the field at reference points inside given elements.

    elems (n,) and ref_pts (n, 2) are paired.  Returns (n,) for scalar
    spaces, else (n, ncomp).
    """
    elems = np.asarray(elems, dtype=np.int64)
    phi = space.basis.eval(ref_pts)
    C = coeffs.reshape(-1)[space.edofs[elems]]
    vals = np.einsum('nm,ncm->nc', phi, C)
    return vals[:, 0] if space.ncomp == 1 else vals


def locate_points(mesh, pts, tol=1e-10):
    """Find containing elements and reference coordinates of points.

    Brute-force barycentric search; raises if a point lies outside the
    mesh by more than tol.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    v = mesh.vertices[mesh.triangles]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 0, 1]
    inv[:, 1, 0] = -jac[:, 1, 0]
    inv[:, 1, 1] = jac[:, 0, 0]
    inv = inv / det[:, None, None]
    elems = np.empty(len(pts), dtype=np.int64)
    refs = np.empty((len(pts), 2))
    for i, p in enumerate(pts):
        r = np.einsum('trd,td->tr', inv, p - v[:, 0])
        ok = ((r[:, 0] >= -tol) & (r[:, 1] >= -tol)
              & (r.sum(axis=1) <= 1 + tol))
        hits = np.flatnonzero(ok)
        if not len(hits):
            raise ValueError(f"point {p} lies outside the mesh")
        elems[i] = hits[0]
        refs[i] = r[hits[0]]
    return elems, refs


def dump_field_csv(space, coeffs, path, samples=None):
    """Write the field to CSV with columns
    element,refx,refy,physx,physy,value[...], sampling each element at
    the reference lattice points (degree+1 per direction by default)."""
    if samples is None:
        d = max(1, space.degree)
        samples = np.array([(i / d, j / d) for j in range(d + 1)
                            for i in range(d + 1 - j)])
    mesh = space.mesh
    T = mesh.n_triangles
    phi = space.basis.eval(samples)
    C = coeffs.reshape(-1)[space.edofs]
    vals = np.einsum('qm,ecm->eqc', phi, C)
    v = mesh.vertices[mesh.triangles]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=1)
    phys = v[:, None, 0, :] + np.einsum('qr,erd->eqd', samples, jac)
    cols = ['value'] if space.ncomp == 1 else \
        [f'value{c}' for c in range(space.ncomp)]
    with open(path, 'w') as fh:
        fh.write('element,refx,refy,physx,physy,' + ','.join(cols) + '\n')
        for e in range(T):
            for q in range(len(samples)):
                row = [str(e), repr(float(samples[q, 0])),
                       repr(float(samples[q, 1])),
                       repr(float(phys[e, q, 0])),
                       repr(float(phys[e, q, 1]))]
                row += [repr(float(vals[e, q, c]))
                        for c in range(space.ncomp)]
                fh.write(','.join(row) + '\n')
