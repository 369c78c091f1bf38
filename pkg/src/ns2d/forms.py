"""Assembly of the semidiscrete incompressible Navier-Stokes operators.

The momentum/continuity pair is discretized with velocity degree r and
pressure degree r-1 on the same mesh, in one of three scheme families:

* ``'dg-n'``: discontinuous velocity and pressure; symmetric interior
  penalty viscous form, skew-stabilized upwind convection (including the
  boundary upwind term), grad-div and normal-jump penalties, and Nitsche
  liftings of the Dirichlet data into every form.
* ``'dg-c'``: a classical upwind DG variant kept for comparison: gradient
  viscous tensor, interior-only upwinding with a fixed factor 1/2, no
  convective skew term, and a single penalty coefficient driving both the
  grad-div and normal-jump terms.
* ``'h1'``: conforming Taylor-Hood; all face terms vanish and Dirichlet
  data is imposed strongly on boundary nodes.

The viscous stress tensor tau(u) is selectable: 'grad' (grad u),
'symgrad' (grad u + grad u^T) or 'deviatoric' (symmetric gradient minus
2/3 div u I).  Penalty defaults follow the polynomial degree: the
interior penalty is 3 r (r+1) for velocity degree r.

Sign conventions.  With A, D, B, C(u) the viscous, penalty, divergence
and convective operators, w the pressure mean weights and (fa, fb, fc,
fd) the Dirichlet liftings, the stationary system reads

    C(u) u + nu (A u - fa) + (D u - fd) - B^T p - fc - f_vol = 0
    B u + fb + w lam = 0
    w . p = 0

so the multiplier lam vanishes at compatible data and fixes the pressure
mean to zero.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.io import mmwrite

from .solver import SaddleSolver
from .space import _field_at_quad, _grad_at_quad

# (s1, s2): tau(G) = G + s1 G^T + s2 tr(G) I
_TENSOR = {'grad': (0.0, 0.0), 'symgrad': (1.0, 0.0),
           'deviatoric': (1.0, -2.0 / 3.0)}
_SCHEMES = ('dg-n', 'dg-c', 'h1')


@dataclass
class SchemeParams:
    """Discretization choices shared by all assembly routines."""
    scheme: str = 'dg-n'
    tensor: str = 'deviatoric'
    nu: float = 1.0
    eta: float = None        # interior penalty; None = 3 r (r+1)
    zeta: float = 0.5        # upwind factor (>= 1/2 on the boundary)
    gamma: float = 0.0       # normal-jump penalty
    gamma_gd: float = 0.0    # grad-div penalty
    convection: bool = True  # False gives the Stokes limit
    vol_qdeg: int = None
    edge_qdeg: int = None

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.tensor not in _TENSOR:
            raise ValueError(f"unknown stress tensor {self.tensor!r}")
        if self.nu <= 0:
            raise ValueError("viscosity nu must be positive")
        if self.scheme == 'h1':
            if self.eta is not None:
                raise ValueError("the conforming scheme has no interior "
                                 "penalty; leave eta unset")
            if self.gamma != 0.0:
                raise ValueError("the conforming scheme has no jump "
                                 "penalty; use gamma_gd for grad-div")
        if self.scheme == 'dg-c':
            if self.tensor != 'grad':
                raise ValueError("the comparison DG scheme is defined with "
                                 "the gradient tensor")
            if self.gamma_gd != 0.0:
                raise ValueError("the comparison DG scheme couples grad-div "
                                 "and jump penalties through gamma alone")

    def eta_value(self, degree):
        if self.eta is not None:
            return float(self.eta)
        return 3.0 * degree * (degree + 1)

    def dh_coefs(self):
        # (grad-div coefficient, normal-jump coefficient)
        if self.scheme == 'dg-c':
            return self.gamma, self.gamma
        return self.gamma_gd, self.gamma

    def vol_degree(self, V):
        if self.vol_qdeg is not None:
            return self.vol_qdeg
        return V.default_quad()

    def edge_degree(self, V):
        if self.edge_qdeg is not None:
            return self.edge_qdeg
        return min(25, 3 * V.degree + 1)


class BoundaryData:
    """Dirichlet velocity data, optionally per boundary tag.

    `value` and the entries of `per_tag` are either constants
    (broadcastable to 2 components) or callables g(t, pts) -> (n, 2).
    """

    def __init__(self, value=0.0, per_tag=None):
        self.value = value
        self.per_tag = dict(per_tag or {})

    @staticmethod
    def _eval_one(v, t, pts):
        if callable(v):
            out = np.asarray(v(t, pts), dtype=float)
            return out.reshape(len(pts), 2)
        return np.broadcast_to(np.asarray(v, dtype=float),
                               (len(pts), 2)).copy()

    def eval(self, t, pts, tag=None):
        v = self.per_tag.get(tag, self.value)
        return self._eval_one(v, t, pts)

    def is_zero(self):
        return (not self.per_tag and not callable(self.value)
                and np.all(np.asarray(self.value) == 0.0))


class _Scatter:
    # indices held as int32: dof counts stay far below 2**31 and the
    # entry lists dominate assembly memory on fine meshes
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, vals):
        self.r.append(np.broadcast_to(rows, vals.shape).ravel().astype(
            np.int32, copy=False))
        self.c.append(np.broadcast_to(cols, vals.shape).ravel().astype(
            np.int32, copy=False))
        self.v.append(vals.ravel())

    def build(self, shape):
        if not self.v:
            return sp.csr_matrix(shape)
        r = np.concatenate(self.r)
        self.r = []
        c = np.concatenate(self.c)
        self.c = []
        v = np.concatenate(self.v)
        self.v = []
        out = sp.coo_matrix((v, (r, c)), shape=shape).tocsr()
        return out


def _chunks(n, size):
    for lo in range(0, n, size):
        yield lo, min(n, lo + size)


def _face_chunk(nloc):
    return max(1, int(3_000_000 // max(1, nloc * nloc)))


def _vol_dflat(V):
    # (T, ncomp*nb) global dofs, local index a = c*nb + m
    return V.edofs.reshape(V.mesh.n_triangles, V.ncomp * V.nb)


def _side_dofs(V, elems, comp):
    # (nf, 2*nb) global velocity dofs for [plus | minus] side-mode index,
    # one component; elems is (plus, minus) or (elem,) for boundary
    parts = [V.edofs[e][:, comp, :] for e in elems]
    return np.concatenate(parts, axis=1)


def assemble_mass(V, qdeg=None):
    """Velocity (or scalar) mass matrix of a space."""
    if qdeg is None:
        qdeg = min(12, 2 * V.degree + 2)
    vt = V.volume_tables(qdeg)
    if V.family == 'dg':
        d = np.repeat(vt.detj, V.ncomp * V.nb)
        return sp.diags(d).tocsr()
    em = np.einsum('eq,qa,qb->eab', vt.w_phys, vt.phi, vt.phi)
    sc = _Scatter()
    for c in range(V.ncomp):
        d = V.edofs[:, c, :]
        sc.add(d[:, :, None], d[:, None, :], em)
    return sc.build((V.ndof, V.ndof))


def assemble_viscous(V, params):
    """The viscous bilinear form a_h (without the viscosity factor)."""
    s1, s2 = _TENSOR[params.tensor if params.scheme != 'dg-c' else 'grad']
    vt = V.volume_tables(params.vol_degree(V))
    nb, nc = V.nb, V.ncomp
    sc = _Scatter()
    dflat = _vol_dflat(V)
    # volume: sum_q w [ delta_cc' ga.gb + s1 gb[ca] ga[cb] + s2 gb[cb] ga[ca] ]
    S = np.einsum('eq,eqmi,eqni->emn', vt.w_phys, vt.grad, vt.grad)
    for c in range(nc):
        d = V.edofs[:, c, :]
        sc.add(d[:, :, None], d[:, None, :], S)
    if s1 or s2:
        X1 = np.einsum('eq,eqnc,eqmd->ecmdn', vt.w_phys, vt.grad, vt.grad)
        X2 = np.einsum('eq,eqnd,eqmc->ecmdn', vt.w_phys, vt.grad, vt.grad)
        E = s1 * X1 + s2 * X2
        sc.add(dflat[:, :, None], dflat[:, None, :],
               E.reshape(len(E), nc * nb, nc * nb))
    if params.scheme != 'h1':
        _viscous_faces(V, params, s1, s2, sc)
    return sc.build((V.ndof, V.ndof))


def _viscous_faces(V, params, s1, s2, sc):
    ft = V.face_tables(params.edge_degree(V))
    eta = params.eta_value(V.degree)
    nb = V.nb

    def run(SP, TGN, TG, n, w, wpen, dofs01):
        # SP: signed traces; TGN: averaged grad.n; TG[c]: averaged grad
        # component c; dofs01[c]: global dofs per combined local index
        nf, nq, nl = SP.shape
        for lo, hi in _chunks(nf, _face_chunk(2 * nl)):
            s = slice(lo, hi)
            pen = np.einsum('fq,fqa,fqb->fab', wpen[s], SP[s], SP[s])
            for ca in range(2):
                for cb in range(2):
                    Xb = (s1 * TG[ca][s] * n[s, None, None, cb]
                          + s2 * TG[cb][s] * n[s, None, None, ca])
                    Xa = (s1 * TG[cb][s] * n[s, None, None, ca]
                          + s2 * TG[ca][s] * n[s, None, None, cb])
                    if ca == cb:
                        Xb = Xb + TGN[s]
                        Xa = Xa + TGN[s]
                    E = -np.einsum('fq,fqa,fqb->fab', w[s], SP[s], Xb)
                    E -= np.einsum('fq,fqa,fqb->fab', w[s], Xa, SP[s])
                    if ca == cb:
                        E += pen
                    sc.add(dofs01[ca][s][:, :, None],
                           dofs01[cb][s][:, None, :], E)

    # interior faces
    SP = np.concatenate([ft.phi_p, -ft.phi_m], axis=2)
    TGN = 0.5 * np.concatenate(
        [np.einsum('fqmi,fi->fqm', ft.gp, ft.int_normal),
         np.einsum('fqmi,fi->fqm', ft.gm, ft.int_normal)], axis=2)
    TG = [0.5 * np.concatenate([ft.gp[..., c], ft.gm[..., c]], axis=2)
          for c in range(2)]
    dofs01 = [_side_dofs(V, (ft.int_plus, ft.int_minus), c)
              for c in range(2)]
    wpen = ft.int_wq * (eta / ft.int_h)[:, None]
    run(SP, TGN, TG, ft.int_normal, ft.int_wq, wpen, dofs01)
    # boundary faces: single trace, no averaging factor
    SPb = ft.phi_b
    TGNb = np.einsum('fqmi,fi->fqm', ft.gb, ft.bnd_normal)
    TGb = [ft.gb[..., c] for c in range(2)]
    dofsb = [_side_dofs(V, (ft.bnd_elem,), c) for c in range(2)]
    wpenb = ft.bnd_wq * (eta / ft.bnd_h)[:, None]
    run(SPb, TGNb, TGb, ft.bnd_normal, ft.bnd_wq, wpenb, dofsb)


def assemble_bh(V, Q, params):
    """The velocity-pressure coupling b_h, as a (nq x nu) matrix."""
    vt = V.volume_tables(params.vol_degree(V))
    qt = Q.volume_tables(params.vol_degree(V))
    sc = _Scatter()
    # volume: (div v, q) -> rows pressure, cols velocity
    for c in range(2):
        E = np.einsum('eq,qa,eqm->eam', vt.w_phys, qt.phi,
                      vt.grad[:, :, :, c])
        sc.add(Q.edofs[:, 0, :][:, :, None], V.edofs[:, c, :][:, None, :], E)
    if params.scheme != 'h1':
        qd = params.edge_degree(V)
        ftv = V.face_tables(qd)
        ftq = Q.face_tables(qd)
        # interior: -<[[v]].n, {{q}}>
        SPv = np.concatenate([ftv.phi_p, -ftv.phi_m], axis=2)
        AVq = 0.5 * np.concatenate([ftq.phi_p, ftq.phi_m], axis=2)
        dq = np.concatenate([Q.edofs[ftq.int_plus][:, 0, :],
                             Q.edofs[ftq.int_minus][:, 0, :]], axis=1)
        for lo, hi in _chunks(len(SPv), _face_chunk(4 * V.nb)):
            s = slice(lo, hi)
            S = np.einsum('fq,fqa,fqb->fab', ftv.int_wq[s], AVq[s], SPv[s])
            for cb in range(2):
                dv = _side_dofs(V, (ftv.int_plus, ftv.int_minus), cb)[s]
                sc.add(dq[s][:, :, None], dv[:, None, :],
                       -S * ftv.int_normal[s, None, None, cb])
        # boundary: -<v.n, q>
        S = np.einsum('fq,fqa,fqb->fab', ftv.bnd_wq, ftq.phi_b, ftv.phi_b)
        dqb = Q.edofs[ftq.bnd_elem][:, 0, :]
        for cb in range(2):
            dv = V.edofs[ftv.bnd_elem][:, cb, :]
            sc.add(dqb[:, :, None], dv[:, None, :],
                   -S * ftv.bnd_normal[:, None, None, cb])
    return sc.build((Q.ndof, V.ndof))


def assemble_dh(V, params):
    """Grad-div and normal-jump stabilization d_h."""
    gd, gj = params.dh_coefs()
    sc = _Scatter()
    nb = V.nb
    if gd:
        vt = V.volume_tables(params.vol_degree(V))
        dflat = _vol_dflat(V)
        E = gd * np.einsum('eq,eqnd,eqmc->ecmdn', vt.w_phys, vt.grad, vt.grad)
        sc.add(dflat[:, :, None], dflat[:, None, :],
               E.reshape(len(E), 2 * nb, 2 * nb))
    if gj and params.scheme != 'h1':
        ft = V.face_tables(params.edge_degree(V))
        SP = np.concatenate([ft.phi_p, -ft.phi_m], axis=2)
        w = ft.int_wq * (gj / ft.int_h)[:, None]
        dofs01 = [_side_dofs(V, (ft.int_plus, ft.int_minus), c)
                  for c in range(2)]
        for lo, hi in _chunks(len(SP), _face_chunk(4 * nb)):
            s = slice(lo, hi)
            S = np.einsum('fq,fqa,fqb->fab', w[s], SP[s], SP[s])
            for ca in range(2):
                for cb in range(2):
                    nn = (ft.int_normal[s, ca] * ft.int_normal[s, cb])
                    sc.add(dofs01[ca][s][:, :, None],
                           dofs01[cb][s][:, None, :],
                           S * nn[:, None, None])
        SPb = ft.phi_b
        wb = ft.bnd_wq * (gj / ft.bnd_h)[:, None]
        dofsb = [V.edofs[ft.bnd_elem][:, c, :] for c in range(2)]
        Sb = np.einsum('fq,fqa,fqb->fab', wb, SPb, SPb)
        for ca in range(2):
            for cb in range(2):
                nn = ft.bnd_normal[:, ca] * ft.bnd_normal[:, cb]
                sc.add(dofsb[ca][:, :, None], dofsb[cb][:, None, :],
                       Sb * nn[:, None, None])
    return sc.build((V.ndof, V.ndof))


def _beta_traces(V, ft, beta):
    C = beta.reshape(-1)[V.edofs]
    bp = np.einsum('fqm,fcm->fqc', ft.phi_p, C[ft.int_plus])
    bm = np.einsum('fqm,fcm->fqc', ft.phi_m, C[ft.int_minus])
    bb = np.einsum('fqm,fcm->fqc', ft.phi_b, C[ft.bnd_elem])
    return bp, bm, bb


def assemble_convective(V, params, beta):
    """The trilinear convection form with transport field beta, as the
    matrix acting on the transported argument: (C u, v) = c_h(beta; u, v).
    """
    if not params.convection:
        return sp.csr_matrix((V.ndof, V.ndof))
    sc = _Scatter()
    _convective_entries(V, params, beta, sc)
    return sc.build((V.ndof, V.ndof))


def _convective_entries(V, params, beta, sc):
    dgn = params.scheme == 'dg-n'
    vt = V.volume_tables(params.vol_degree(V))
    nb = V.nb
    bq = _field_at_quad(V, beta, vt)
    # volume: (beta.grad u, v) [+ 1/2 (div beta u, v) for dg-n/h1]
    bg = np.einsum('eqc,eqmc->eqm', bq, vt.grad)
    S = np.einsum('eq,qa,eqb->eab', vt.w_phys, vt.phi, bg)
    if dgn or params.scheme == 'h1':
        gb = _grad_at_quad(V, beta, vt)
        divb = gb[:, :, 0, 0] + gb[:, :, 1, 1]
        S += 0.5 * np.einsum('eq,eq,qa,qb->eab', vt.w_phys, divb,
                             vt.phi, vt.phi)
    for c in range(2):
        d = V.edofs[:, c, :]
        sc.add(d[:, :, None], d[:, None, :], S)
    if params.scheme == 'h1':
        return

    ft = V.face_tables(params.edge_degree(V))
    zeta = 0.5 if params.scheme == 'dg-c' else params.zeta
    bp, bm, bb = _beta_traces(V, ft, beta)
    bn = 0.5 * np.einsum('fqc,fc->fq', bp + bm, ft.int_normal)
    SP = np.concatenate([ft.phi_p, -ft.phi_m], axis=2)
    AV = 0.5 * np.concatenate([ft.phi_p, ft.phi_m], axis=2)
    dofs01 = [_side_dofs(V, (ft.int_plus, ft.int_minus), c) for c in range(2)]
    # interior: -<(bn)[[u]], {{v}}> + zeta <|bn| [[u]], [[v]]>
    #           [- 1/2 <[[beta]].n, {{u.v}}> for dg-n]
    S = -np.einsum('fq,fq,fqa,fqb->fab', ft.int_wq, bn, AV, SP)
    S += zeta * np.einsum('fq,fq,fqa,fqb->fab', ft.int_wq, np.abs(bn),
                          SP, SP)
    if dgn:
        jbn = np.einsum('fqc,fc->fq', bp - bm, ft.int_normal)
        # {{u.v}} pairs same side with itself; SD carries plain traces
        SD = np.concatenate([ft.phi_p, ft.phi_m], axis=2)
        half = np.einsum('fq,fq,fqa,fqb->fab', ft.int_wq, jbn, SD, SD)
        mask = np.zeros((2 * nb, 2 * nb))
        mask[:nb, :nb] = 1.0
        mask[nb:, nb:] = 1.0
        S += -0.25 * half * mask
    for c in range(2):
        sc.add(dofs01[c][:, :, None], dofs01[c][:, None, :], S)
    if dgn:
        # boundary upwind: zeta <|beta.n| u, v>
        bnb = np.einsum('fqc,fc->fq', bb, ft.bnd_normal)
        Sb = zeta * np.einsum('fq,fq,fqa,fqb->fab', ft.bnd_wq, np.abs(bnb),
                              ft.phi_b, ft.phi_b)
        for c in range(2):
            d = V.edofs[ft.bnd_elem][:, c, :]
            sc.add(d[:, :, None], d[:, None, :], Sb)


def convective_apply(V, params, beta, u):
    """The vector of the trilinear convection form, c_h(beta; u, v) over
    all test functions v.  Matches assemble_convective(beta) @ u without
    forming the matrix; residual evaluations go through here.
    """
    out = np.zeros(V.ndof)
    if not params.convection:
        return out
    dgn = params.scheme == 'dg-n'
    vt = V.volume_tables(params.vol_degree(V))
    bq = _field_at_quad(V, beta, vt)
    uq = _field_at_quad(V, u, vt)
    gu = _grad_at_quad(V, u, vt)
    # volume: (beta.grad u + [1/2 div beta u], v)
    conv = np.einsum('eqd,eqcd->eqc', bq, gu)
    if dgn or params.scheme == 'h1':
        gb = _grad_at_quad(V, beta, vt)
        conv += 0.5 * (gb[:, :, 0, 0] + gb[:, :, 1, 1])[:, :, None] * uq
    em = np.einsum('eq,eqc,qm->ecm', vt.w_phys, conv, vt.phi)
    np.add.at(out, V.edofs.ravel(), em.ravel())
    if params.scheme == 'h1':
        return out

    ft = V.face_tables(params.edge_degree(V))
    zeta = 0.5 if params.scheme == 'dg-c' else params.zeta
    bp, bm, bb = _beta_traces(V, ft, beta)
    up, um, ub = _beta_traces(V, ft, u)
    bn = 0.5 * np.einsum('fqc,fc->fq', bp + bm, ft.int_normal)
    SP = np.concatenate([ft.phi_p, -ft.phi_m], axis=2)
    AV = 0.5 * np.concatenate([ft.phi_p, ft.phi_m], axis=2)
    ju = up - um
    # interior rows: (-bn [[u]], {{v}}) + zeta (|bn| [[u]], [[v]])
    row = (-bn[:, :, None] * AV + zeta * np.abs(bn)[:, :, None] * SP)
    if dgn:
        # -1/4 <[[beta]].n, u.v> pairs traces of one side with itself
        jbn = np.einsum('fqc,fc->fq', bp - bm, ft.int_normal)
        wj = -0.25 * ft.int_wq * jbn
    for c in range(2):
        dofs = _side_dofs(V, (ft.int_plus, ft.int_minus), c)
        em = np.einsum('fq,fq,fqa->fa', ft.int_wq, ju[:, :, c], row)
        if dgn:
            em[:, :V.nb] += np.einsum('fq,fq,fqa->fa', wj, up[:, :, c],
                                      ft.phi_p)
            em[:, V.nb:] += np.einsum('fq,fq,fqa->fa', wj, um[:, :, c],
                                      ft.phi_m)
        np.add.at(out, dofs.ravel(), em.ravel())
    if dgn:
        bnb = np.einsum('fqc,fc->fq', bb, ft.bnd_normal)
        for c in range(2):
            d = V.edofs[ft.bnd_elem][:, c, :]
            em = zeta * np.einsum('fq,fq,fqa->fa', ft.bnd_wq * np.abs(bnb),
                                  ub[:, :, c], ft.phi_b)
            np.add.at(out, d.ravel(), em.ravel())
    return out


def convective_jacobian(V, params, u):
    """Derivative of u -> c_h(u; u, .) at u, including the directional
    derivative of the upwind weight (with sign(0) = 0)."""
    if not params.convection:
        return sp.csr_matrix((V.ndof, V.ndof))
    dgn = params.scheme == 'dg-n'
    sc = _Scatter()
    _convective_entries(V, params, u, sc)
    vt = V.volume_tables(params.vol_degree(V))
    nb = V.nb
    uq = _field_at_quad(V, u, vt)
    gu = _grad_at_quad(V, u, vt)
    dflat = _vol_dflat(V)
    # volume beta-slot: (d.grad u, v) [+ 1/2 ((div d) u, v) for dg-n/h1];
    # row dof (ca, ma), column dof (cb, mb)
    E = np.einsum('eq,qb,eqcd,qa->ecadb', vt.w_phys, vt.phi, gu, vt.phi)
    if dgn or params.scheme == 'h1':
        E += 0.5 * np.einsum('eq,eqbd,eqc,qa->ecadb', vt.w_phys, vt.grad,
                             uq, vt.phi)
    sc.add(dflat[:, :, None], dflat[:, None, :],
           E.reshape(len(E), 2 * nb, 2 * nb))
    if params.scheme != 'h1':
        _conv_jac_faces(V, params, u, sc)
    return sc.build((V.ndof, V.ndof))


def _conv_jac_faces(V, params, u, sc):
    dgn = params.scheme == 'dg-n'
    zeta = 0.5 if params.scheme == 'dg-c' else params.zeta
    ft = V.face_tables(params.edge_degree(V))
    nb = V.nb
    up, um, ub = _beta_traces(V, ft, u)
    n = ft.int_normal
    bn = 0.5 * np.einsum('fqc,fc->fq', up + um, n)
    ju = up - um
    SP = np.concatenate([ft.phi_p, -ft.phi_m], axis=2)
    AV = 0.5 * np.concatenate([ft.phi_p, ft.phi_m], axis=2)
    SD = np.concatenate([ft.phi_p, ft.phi_m], axis=2)
    dofs01 = [_side_dofs(V, (ft.int_plus, ft.int_minus), c) for c in range(2)]
    sgn = np.sign(bn)
    for lo, hi in _chunks(len(SP), _face_chunk(4 * nb)):
        s = slice(lo, hi)
        wq = ft.int_wq[s][:, :, None]
        for ca in range(2):
            # -<({{d}}.n)[[u]], {{v}}> and the upwind weight derivative
            # zeta <sign(bn) ({{d}}.n) [[u]], [[v]]>; rows carry [[u]]_ca
            R = wq * ju[s][:, :, ca:ca + 1] * (
                -AV[s] + zeta * sgn[s][:, :, None] * SP[s])
            if dgn:
                # -1/2 <[[d]].n, {{u.v}}>: same-side pairing of u and v
                uside = np.concatenate(
                    [np.repeat(up[s][:, :, ca:ca + 1], nb, axis=2),
                     np.repeat(um[s][:, :, ca:ca + 1], nb, axis=2)], axis=2)
                R4 = -0.25 * wq * SD[s] * uside
            for cb in range(2):
                col = AV[s] * n[s, None, None, cb]
                E = np.einsum('fqa,fqb->fab', R, col)
                if dgn:
                    E += np.einsum('fqa,fqb->fab', R4,
                                   SP[s] * n[s, None, None, cb])
                sc.add(dofs01[ca][s][:, :, None], dofs01[cb][s][:, None, :],
                       E)
    if dgn:
        bnb = np.einsum('fqc,fc->fq', ub, ft.bnd_normal)
        sgb = np.sign(bnb)
        dofsb = [V.edofs[ft.bnd_elem][:, c, :] for c in range(2)]
        for ca in range(2):
            R = zeta * np.einsum('fq,fq,fq,fqa->fqa', ft.bnd_wq, sgb,
                                 ub[:, :, ca], ft.phi_b)
            for cb in range(2):
                E = np.einsum('fqa,fqb->fab', R,
                              ft.phi_b * ft.bnd_normal[:, None, None, cb])
                sc.add(dofsb[ca][:, :, None], dofsb[cb][:, None, :], E)


def mean_weights(Q):
    """Integrals of the pressure basis functions (the mean row)."""
    vt = Q.volume_tables(min(12, 2 * Q.degree + 2))
    em = np.einsum('eq,qm->em', vt.w_phys, vt.phi)
    w = np.zeros(Q.ndof)
    np.add.at(w, Q.edofs[:, 0, :].ravel(), em.ravel())
    return w


def assemble_volume_load(V, fvol, t, qdeg=None):
    """Volume force load vector (f(t, .), v)."""
    if fvol is None:
        return np.zeros(V.ndof)
    vt = V.volume_tables(qdeg if qdeg is not None else V.default_quad())
    pts = vt.phys.reshape(-1, 2)
    fv = np.asarray(fvol(t, pts), dtype=float).reshape(
        V.mesh.n_triangles, len(vt.w), 2)
    em = np.einsum('eq,eqc,qm->ecm', vt.w_phys, fv, vt.phi)
    out = np.zeros(V.ndof)
    np.add.at(out, V.edofs.ravel(), em.ravel())
    return out


def assemble_boundary_loads(V, Q, params, bdata, t):
    """Dirichlet liftings (fa, fb, fc, fd) at time t.

    fa is returned without the viscosity factor.  For the conforming
    scheme all liftings vanish (data enters through boundary nodes).
    """
    fa = np.zeros(V.ndof)
    fb = np.zeros(Q.ndof)
    fc = np.zeros(V.ndof)
    fd = np.zeros(V.ndof)
    if params.scheme == 'h1' or bdata is None:
        return fa, fb, fc, fd
    qd = params.edge_degree(V)
    ftv = V.face_tables(qd)
    ftq = Q.face_tables(qd)
    eta = params.eta_value(V.degree)
    _, gj = params.dh_coefs()
    s1, s2 = _TENSOR[params.tensor if params.scheme != 'dg-c' else 'grad']
    tags = np.asarray(ftv.bnd_tags, dtype=object)
    for tag in set(ftv.bnd_tags):
        f = np.flatnonzero(tags == tag)
        pts = ftv.bnd_phys[f].reshape(-1, 2)
        g = bdata.eval(t, pts, tag).reshape(len(f), ftv.nq, 2)
        w = ftv.bnd_wq[f]
        n = ftv.bnd_normal[f]
        h = ftv.bnd_h[f]
        gn = np.einsum('fqc,fc->fq', g, n)
        phi = ftv.phi_b[f]
        grad = ftv.gb[f]
        gdotgrad = np.einsum('fqc,fqmc->fqm', g, grad)
        gradn = np.einsum('fqmc,fc->fqm', grad, n)
        for ca in range(2):
            d = V.edofs[ftv.bnd_elem[f]][:, ca, :]
            # fa: (eta/h)<g, v> - <g, tau(v) n> for test dof v = phi e_ca
            va = np.einsum('fq,fq,fqm->fm', w * (eta / h)[:, None],
                           g[:, :, ca], phi)
            tau_v = (g[:, :, ca:ca + 1] * gradn
                     + s1 * gdotgrad * n[:, None, None, ca]
                     + s2 * gn[:, :, None] * grad[:, :, :, ca])
            va -= np.einsum('fq,fqm->fm', w, tau_v)
            np.add.at(fa, d.ravel(), va.ravel())
            if params.scheme == 'dg-n':
                # fc: zeta <|g.n| g, v>
                vc = params.zeta * np.einsum(
                    'fq,fq,fqm->fm', w * np.abs(gn), g[:, :, ca], phi)
                np.add.at(fc, d.ravel(), vc.ravel())
            if gj:
                # fd: (gamma/h) <g.n, v.n>
                vd = gj * n[:, None, ca] * np.einsum(
                    'fq,fqm->fm', w * gn / h[:, None], phi)
                np.add.at(fd, d.ravel(), vd.ravel())
        # fb: <g.n, q>
        dq = Q.edofs[ftq.bnd_elem[f]][:, 0, :]
        vb = np.einsum('fq,fq,fqm->fm', w, gn, ftq.phi_b[f])
        np.add.at(fb, dq.ravel(), vb.ravel())
    return fa, fb, fc, fd


def dump_operator(A, path):
    """Write a sparse operator in MatrixMarket coordinate format."""
    mmwrite(path, sp.coo_matrix(A))


class NSSystem:
    """Assembled spatial discretization of one Navier-Stokes problem.

    Bundles the two spaces, the scheme parameters, the Dirichlet data and
    the volume force, and caches every state-independent operator.  The
    unknown layout is x = [u, p, lam] with lam the pressure-mean
    multiplier.

    For the conforming scheme the momentum rows of boundary dofs are
    replaced by the strong conditions u_i - g_i(t); the constraint and
    mean rows are untouched.
    """

    def __init__(self, V, Q, params, bdata=None, fvol=None):
        if V.mesh is not Q.mesh:
            raise ValueError("velocity and pressure spaces share one mesh")
        if (params.scheme == 'h1') != (V.family == 'cg'):
            raise ValueError("scheme family and space family disagree")
        if V.degree != Q.degree + 1:
            raise ValueError("velocity degree must exceed pressure degree "
                             "by one")
        self.V, self.Q, self.params = V, Q, params
        self.bdata = bdata if bdata is not None else BoundaryData(0.0)
        self.fvol = fvol
        self.M = assemble_mass(V)
        self.A = assemble_viscous(V, params)
        self.D = assemble_dh(V, params)
        self.B = assemble_bh(V, Q, params)
        self.BT = self.B.T.tocsr()
        self.w = mean_weights(Q)
        self.K0 = (params.nu * self.A + self.D).tocsr()
        self.nu_dofs = V.ndof
        self.nq_dofs = Q.ndof
        self.ntot = V.ndof + Q.ndof + 1
        self._mp_diag = None
        if params.scheme == 'h1':
            dofs, coords, comps, tags = V.boundary_dofs()
            self._bc_dofs = dofs
            self._bc_coords = coords
            self._bc_comps = comps
            self._bc_tags = tags
            keep = np.ones(V.ndof)
            keep[dofs] = 0.0
            self._keep = sp.diags(keep).tocsr()
            put = np.zeros(V.ndof)
            put[dofs] = 1.0
            self._put = sp.diags(put).tocsr()
        else:
            self._bc_dofs = None

    # -- state packing ---------------------------------------------------
    def split(self, x):
        nu, nq = self.nu_dofs, self.nq_dofs
        return x[:nu], x[nu:nu + nq], x[nu + nq]

    def join(self, u, p, lam):
        return np.concatenate([u, p, [lam]])

    def zero_state(self):
        return np.zeros(self.ntot)

    def set_nu(self, nu):
        """Change the viscosity in place; used by solver continuation.

        Only the cached viscous combination depends on nu, the individual
        operators do not, so this is cheap.
        """
        self.params.nu = nu
        self.K0 = (nu * self.A + self.D).tocsr()

    # -- data evaluation -------------------------------------------------
    def bc_values(self, t):
        """Strong boundary values for the conforming scheme at time t."""
        vals = np.empty(len(self._bc_dofs))
        tags = np.asarray(self._bc_tags, dtype=object)
        for tag in set(self._bc_tags):
            i = np.flatnonzero(tags == tag)
            g = self.bdata.eval(t, self._bc_coords[i], tag)
            vals[i] = g[np.arange(len(i)), self._bc_comps[i]]
        return vals

    def loads(self, t):
        """Velocity load (force plus liftings) and pressure lifting at t."""
        fa, fb, fc, fd = assemble_boundary_loads(
            self.V, self.Q, self.params, self.bdata, t)
        F = assemble_volume_load(self.V, self.fvol, t,
                                 self.params.vol_degree(self.V))
        F += self.params.nu * fa + fc + fd
        return F, fb

    def conv(self, u):
        return assemble_convective(self.V, self.params, u)

    def conv_apply(self, beta, u):
        return convective_apply(self.V, self.params, beta, u)

    def conv_jac(self, u):
        return convective_jacobian(self.V, self.params, u)

    # -- stationary residual and Jacobian ---------------------------------
    def residual(self, x, t=0.0, loads=None):
        """Stacked stationary residual [momentum, constraint, mean] at x."""
        u, p, lam = self.split(x)
        F, fb = self.loads(t) if loads is None else loads
        Ru = self.conv_apply(u, u) + self.K0 @ u - self.BT @ p - F
        Rp = self.B @ u + fb + self.w * lam
        Rl = self.w @ p
        if self._bc_dofs is not None:
            Ru[self._bc_dofs] = u[self._bc_dofs] - self.bc_values(t)
        return np.concatenate([Ru, Rp, [Rl]])

    def jacobian(self, x, t=0.0):
        u, p, lam = self.split(x)
        Juu = self.K0 + self.conv_jac(u)
        JuP = -self.BT
        if self._bc_dofs is not None:
            Juu = self._keep @ Juu + self._put
            JuP = self._keep @ JuP
        wcol = sp.csr_matrix(
            (self.w, (np.arange(self.nq_dofs),
                      np.zeros(self.nq_dofs, dtype=int))),
            shape=(self.nq_dofs, 1))
        J = sp.bmat([[Juu, JuP, None],
                     [self.B, None, wcol],
                     [None, wcol.T, None]], format='csr')
        return J

    def pressure_mass_diag(self):
        """Diagonal (DG) or lumped (conforming) pressure mass matrix."""
        if self._mp_diag is None:
            Mq = assemble_mass(self.Q)
            if self.params.scheme == 'h1':
                self._mp_diag = np.asarray(Mq.sum(axis=1)).ravel()
            else:
                self._mp_diag = Mq.diagonal()
        return self._mp_diag

    def linear_solver(self, x, t=0.0, mode='auto', rtol=None):
        """Factored SaddleSolver for the stationary Jacobian at x."""
        u = self.split(x)[0]
        return self.stage_solver(u, 0.0, 1.0, 1.0, 1.0, mode=mode,
                                 rtol=rtol)

    def stage_solver(self, u_lin, mass_coef, stiff_coef, grad_coef,
                     div_coef, mode='auto', rtol=None):
        """SaddleSolver for one linearized (stage) system with blocks

            F  = mass_coef M + stiff_coef (K0 + Jc(u_lin)),
            G  = -grad_coef B^T,  Bc = div_coef B,

        covering the stationary Jacobian and the single-stage implicit
        steps.  The Schur preconditioner scale reduces to the viscosity
        whenever the time-step coefficients cancel.
        """
        Juu = mass_coef * self.M + stiff_coef * (self.K0
                                                 + self.conv_jac(u_lin))
        JuP = -grad_coef * self.BT
        if self._bc_dofs is not None:
            Juu = self._keep @ Juu + self._put
            JuP = self._keep @ JuP
        scale = stiff_coef * self.params.nu / (grad_coef * div_coef)
        return SaddleSolver(Juu, JuP, div_coef * self.B, self.w,
                            mp_diag=self.pressure_mass_diag(), scale=scale,
                            mode=mode, rtol=rtol)

    def energy(self, u):
        """Squared discrete L2 norm of the velocity, u^T M u."""
        return float(u @ (self.M @ u))
