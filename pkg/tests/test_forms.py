import numpy as np
import pytest
import scipy.sparse as sp
from scipy.io import mmread

from ns2d.mesh import build_rect_mesh
from ns2d.space import build_space, l2_project, l2_error
from ns2d.forms import (SchemeParams, BoundaryData, assemble_mass,
                        assemble_viscous, assemble_bh, assemble_dh,
                        assemble_convective, convective_apply,
                        convective_jacobian, mean_weights, dump_operator,
                        NSSystem)


def params_for(scheme, **kw):
    base = dict(nu=0.1)
    if scheme == 'dg-c':
        base.update(tensor='grad')
    base.update(kw)
    return SchemeParams(scheme=scheme, **base)


def spaces_for(scheme, n=3, k=1, box=(0.0, 1.0, 0.0, 1.0)):
    mesh = build_rect_mesh(*box, n, n)
    fam = 'cg' if scheme == 'h1' else 'dg'
    V = build_space(mesh, fam, k + 1, ncomp=2)
    Q = build_space(mesh, fam, k, ncomp=1, topo=V.topo)
    return mesh, V, Q


def test_scheme_params_validation():
    with pytest.raises(ValueError):
        SchemeParams(scheme='hdg')
    with pytest.raises(ValueError):
        SchemeParams(tensor='hessian')
    with pytest.raises(ValueError):
        SchemeParams(nu=0.0)
    with pytest.raises(ValueError):
        SchemeParams(scheme='h1', eta=12.0)
    with pytest.raises(ValueError):
        SchemeParams(scheme='h1', gamma=1.0)
    with pytest.raises(ValueError):
        SchemeParams(scheme='dg-c', tensor='deviatoric')
    with pytest.raises(ValueError):
        SchemeParams(scheme='dg-c', tensor='grad', gamma_gd=1.0)


def test_penalty_default_grows_with_degree():
    p = SchemeParams()
    # velocity degree r gets 3 r (r+1)
    assert p.eta_value(1) == 6.0
    assert p.eta_value(2) == 18.0
    assert p.eta_value(4) == 60.0
    assert SchemeParams(eta=33.0).eta_value(4) == 33.0


def test_dh_coefficients_per_scheme():
    assert SchemeParams(gamma=2.0, gamma_gd=0.5).dh_coefs() == (0.5, 2.0)
    p = SchemeParams(scheme='dg-c', tensor='grad', gamma=3.0)
    assert p.dh_coefs() == (3.0, 3.0)


def test_boundary_data_dispatch():
    bd = BoundaryData(0.0, per_tag={'top': (1.0, 0.0)})
    pts = np.array([[0.5, 1.0], [0.2, 1.0]])
    assert np.allclose(bd.eval(0.0, pts, 'top'), [[1, 0], [1, 0]])
    assert np.allclose(bd.eval(0.0, pts, 'left'), 0.0)
    assert not bd.is_zero()
    assert BoundaryData(0.0).is_zero()
    bdt = BoundaryData(lambda t, p: np.full((len(p), 2), t))
    assert np.allclose(bdt.eval(2.0, pts), 2.0)


def test_mass_matrix_is_diagonal_for_dg_and_spd():
    _, V, _ = spaces_for('dg-n')
    M = assemble_mass(V)
    assert (M - sp.diags(M.diagonal())).nnz == 0
    assert M.diagonal().min() > 0
    _, Vc, _ = spaces_for('h1')
    Mc = assemble_mass(Vc)
    assert np.abs(Mc - Mc.T).max() < 1e-14
    assert np.linalg.eigvalsh(Mc.toarray()).min() > 0


def test_mass_matrix_reproduces_l2_norm():
    mesh, V, _ = spaces_for('dg-n', n=4, k=2)

    def vf(p):
        return np.stack([np.sin(p[:, 0]), p[:, 1]**2], axis=1)

    u = l2_project(V, vf)
    M = assemble_mass(V)
    norm2 = l2_error(V, u, None)**2
    assert float(u @ (M @ u)) == pytest.approx(norm2, rel=1e-12)


def test_viscous_form_is_symmetric_for_every_tensor():
    for scheme, tensors in [('dg-n', ('grad', 'symgrad', 'deviatoric')),
                            ('dg-c', ('grad',)),
                            ('h1', ('grad', 'symgrad', 'deviatoric'))]:
        _, V, _ = spaces_for(scheme)
        for tensor in tensors:
            params = params_for(scheme, tensor=tensor, gamma=1.0
                                if scheme != 'h1' else 0.0)
            A = assemble_viscous(V, params)
            assert np.abs(A - A.T).max() < 1e-11


def broken_seminorm_sq(V, params, u):
    # independent broken norm: sum_e |grad u|^2 + sum_F eta/h ||[[u]]||^2
    vt = V.volume_tables(params.vol_degree(V))
    from ns2d.space import _grad_at_quad
    g = _grad_at_quad(V, u, vt)
    out = float(np.einsum('eq,eqci->', vt.w_phys, g**2))
    if params.scheme == 'h1':
        return out
    ft = V.face_tables(params.edge_degree(V))
    eta = params.eta_value(V.degree)
    C = u.reshape(-1)[V.edofs]
    jp = np.einsum('fqm,fcm->fqc', ft.phi_p, C[ft.int_plus])
    jm = np.einsum('fqm,fcm->fqc', ft.phi_m, C[ft.int_minus])
    jump = jp - jm
    out += eta * float(np.einsum(
        'fq,fqc->', ft.int_wq / ft.int_h[:, None], jump**2))
    jb = np.einsum('fqm,fcm->fqc', ft.phi_b, C[ft.bnd_elem])
    out += eta * float(np.einsum(
        'fq,fqc->', ft.bnd_wq / ft.bnd_h[:, None], jb**2))
    return out


def test_viscous_form_positive_and_coercive():
    rng = np.random.default_rng(11)
    for scheme in ('dg-n', 'dg-c', 'h1'):
        _, V, _ = spaces_for(scheme, n=4, k=1)
        params = params_for(scheme)
        A = assemble_viscous(V, params)
        for _ in range(20):
            u = rng.standard_normal(V.ndof)
            q = float(u @ (A @ u))
            assert q >= -1e-11
            assert q >= 0.1 * broken_seminorm_sq(V, params, u)


def test_divergence_form_kills_constant_pressures():
    # with q = 1 the element boundary terms cancel against the jump
    # terms over all faces, so the constant-pressure row of b_h is zero;
    # the conforming variant keeps the boundary flux, which the strong
    # boundary rows remove, so only interior columns must vanish
    for scheme in ('dg-n', 'dg-c', 'h1'):
        _, V, Q = spaces_for(scheme)
        params = params_for(scheme)
        B = assemble_bh(V, Q, params)
        ones = l2_project(Q, lambda p: np.ones(len(p)))
        r = np.abs(B.T @ ones)
        if scheme == 'h1':
            r[V.boundary_dofs()[0]] = 0.0
        assert np.max(r) < 1e-12


def test_divergence_form_on_continuous_fields():
    # for continuous fields with zero normal trace every face term of
    # b_h vanishes and only (div u, q) remains, testable against the
    # pressure mass matrix; a div-free such field gives zero rows
    def tangential(p):
        x, y = p[:, 0], p[:, 1]
        return np.stack([x * (1 - x), np.zeros(len(p))], axis=1)

    def stream(p):
        # curl of x(1-x)y(1-y): div-free, zero normal trace
        x, y = p[:, 0], p[:, 1]
        return np.stack([x * (1 - x) * (1 - 2 * y),
                         -(1 - 2 * x) * y * (1 - y)], axis=1)

    for scheme in ('dg-n', 'dg-c', 'h1'):
        _, V, Q = spaces_for(scheme, k=2)
        params = params_for(scheme)
        B = assemble_bh(V, Q, params)
        u = l2_project(V, tangential)
        div_u = l2_project(Q, lambda p: 1 - 2 * p[:, 0])
        Mq = assemble_mass(Q)
        assert np.max(np.abs(B @ u - Mq @ div_u)) < 1e-12
        assert np.max(np.abs(B @ l2_project(V, stream))) < 1e-12


def test_mean_weights_integrate_pressure():
    _, _, Q = spaces_for('dg-n', k=2)
    w = mean_weights(Q)
    p = l2_project(Q, lambda p: p[:, 0])
    assert float(w @ p) == pytest.approx(0.5, abs=1e-13)
    ones = l2_project(Q, lambda p: np.ones(len(p)))
    assert float(w @ ones) == pytest.approx(1.0, abs=1e-13)


def test_penalty_form_is_psd_and_vanishes_on_conforming_divfree():
    # the penalty form sees normal jumps on every face, boundary ones
    # included, so the null field must also have zero normal trace
    def stream(p):
        x, y = p[:, 0], p[:, 1]
        return np.stack([x * (1 - x) * (1 - 2 * y),
                         -(1 - 2 * x) * y * (1 - y)], axis=1)

    rng = np.random.default_rng(5)
    for scheme in ('dg-n', 'dg-c'):
        _, V, _ = spaces_for(scheme, k=2)
        kw = dict(gamma=2.0) if scheme == 'dg-c' else dict(
            gamma=2.0, gamma_gd=0.7)
        params = params_for(scheme, **kw)
        D = assemble_dh(V, params)
        for _ in range(10):
            u = rng.standard_normal(V.ndof)
            assert float(u @ (D @ u)) >= -1e-11
        udf = l2_project(V, stream)
        assert abs(float(udf @ (D @ udf))) < 1e-12


def test_grad_div_penalty_value():
    # u = (x^2, y) has div = 2x + 1; gamma_gd * int (2x+1)^2 = 13/3 gd
    _, V, _ = spaces_for('dg-n', k=2)
    params = params_for('dg-n', gamma=0.0, gamma_gd=0.8)
    D = assemble_dh(V, params)
    u = l2_project(V, lambda p: np.stack([p[:, 0]**2, p[:, 1]], axis=1))
    assert float(u @ (D @ u)) == pytest.approx(0.8 * 13.0 / 3.0, rel=1e-12)


def test_convective_form_positivity_with_upwinding():
    # the skew-stabilized form is nonnegative in its last two arguments
    # for any transport field when the upwind factor is at least 1/2
    rng = np.random.default_rng(23)
    _, V, _ = spaces_for('dg-n', n=4, k=1)
    for zeta in (0.5, 0.75, 1.0):
        params = params_for('dg-n', zeta=zeta)
        for _ in range(10):
            beta = rng.standard_normal(V.ndof)
            v = rng.standard_normal(V.ndof)
            C = assemble_convective(V, params, beta)
            assert float(v @ (C @ v)) >= -1e-10


def test_convective_apply_matches_matrix():
    rng = np.random.default_rng(4)
    for scheme in ('dg-n', 'dg-c', 'h1'):
        _, V, _ = spaces_for(scheme)
        params = params_for(scheme, gamma=1.0 if scheme != 'h1' else 0.0)
        beta = rng.standard_normal(V.ndof)
        u = rng.standard_normal(V.ndof)
        C = assemble_convective(V, params, beta)
        assert np.max(np.abs(C @ u - convective_apply(V, params, beta, u))
                      ) < 1e-11


def test_convective_jacobian_matches_finite_differences():
    rng = np.random.default_rng(9)
    eps = 1e-6
    for scheme in ('dg-n', 'dg-c', 'h1'):
        _, V, _ = spaces_for(scheme)
        params = params_for(scheme, gamma=1.0 if scheme != 'h1' else 0.0)
        u = rng.standard_normal(V.ndof)
        du = rng.standard_normal(V.ndof)
        J = convective_jacobian(V, params, u)
        fp = convective_apply(V, params, u + eps * du, u + eps * du)
        fm = convective_apply(V, params, u - eps * du, u - eps * du)
        fd = (fp - fm) / (2 * eps)
        scale = max(1.0, np.max(np.abs(fd)))
        assert np.max(np.abs(J @ du - fd)) / scale < 1e-7


def test_convection_switch_gives_stokes_limit():
    _, V, _ = spaces_for('dg-n')
    params = params_for('dg-n', convection=False)
    u = np.ones(V.ndof)
    assert assemble_convective(V, params, u).nnz == 0
    assert convective_jacobian(V, params, u).nnz == 0
    assert np.all(convective_apply(V, params, u, u) == 0.0)


def nssystem_for(scheme, n=3, k=1, **kw):
    mesh, V, Q = spaces_for(scheme, n=n, k=k)
    params = params_for(scheme, **kw)
    bdata = BoundaryData(lambda t, p: np.stack(
        [np.sin(p[:, 0] + t), np.cos(p[:, 1])], axis=1))
    fvol = lambda t, p: np.stack([p[:, 1] * 0 + 1.0, p[:, 0]], axis=1)
    return NSSystem(V, Q, params, bdata=bdata, fvol=fvol)


def test_nssystem_validation():
    mesh, V, Q = spaces_for('dg-n')
    other = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 2, 2)
    Q_other = build_space(other, 'dg', 1)
    with pytest.raises(ValueError):
        NSSystem(V, Q_other, params_for('dg-n'))
    with pytest.raises(ValueError):
        NSSystem(V, Q, params_for('h1'))
    V3 = build_space(mesh, 'dg', 3, ncomp=2, topo=V.topo)
    with pytest.raises(ValueError):
        NSSystem(V3, Q, params_for('dg-n'))


def test_full_jacobian_matches_residual_differences():
    rng = np.random.default_rng(17)
    eps = 1e-6
    for scheme in ('dg-n', 'dg-c', 'h1'):
        sysm = nssystem_for(scheme, gamma=1.0 if scheme != 'h1' else 0.0)
        x = 0.5 * rng.standard_normal(sysm.ntot)
        dx = rng.standard_normal(sysm.ntot)
        J = sysm.jacobian(x, t=0.3)
        fd = (sysm.residual(x + eps * dx, 0.3)
              - sysm.residual(x - eps * dx, 0.3)) / (2 * eps)
        scale = max(1.0, np.max(np.abs(fd)))
        assert np.max(np.abs(J @ dx - fd)) / scale < 1e-7


def test_residual_mean_row_and_constraint_signs():
    sysm = nssystem_for('dg-n')
    x = np.zeros(sysm.ntot)
    u = l2_project(sysm.V, lambda p: np.stack(
        [p[:, 0], np.zeros(len(p))], axis=1))
    x[:sysm.nu_dofs] = u
    R = sysm.residual(x, 0.0)
    nu_, nq_ = sysm.nu_dofs, sysm.nq_dofs
    # constraint rows: B u + fb; mean row: w . p = 0 at zero pressure
    fb = sysm.loads(0.0)[1]
    assert np.allclose(R[nu_:nu_ + nq_], sysm.B @ u + fb, atol=1e-13)
    assert R[-1] == 0.0


def test_set_nu_rebuilds_stiffness():
    sysm = nssystem_for('dg-n', gamma=1.0)
    K_before = sysm.K0.copy()
    sysm.set_nu(0.4)
    assert sysm.params.nu == 0.4
    diff = (sysm.K0 - (0.4 * sysm.A + sysm.D)).toarray()
    assert np.max(np.abs(diff)) < 1e-14
    assert np.max(np.abs((sysm.K0 - K_before).toarray())) > 1e-6


def test_strong_boundary_rows_for_conforming_scheme():
    sysm = nssystem_for('h1')
    x = sysm.zero_state()
    R = sysm.residual(x, t=0.2)
    bc = sysm._bc_dofs
    vals = sysm.bc_values(0.2)
    assert np.allclose(R[bc], -vals, atol=1e-14)
    # the Jacobian rows of boundary dofs are identity rows
    J = sysm.jacobian(x, t=0.2).tocsr()
    for d in bc[:5]:
        row = J[d].toarray().ravel()
        assert row[d] == pytest.approx(1.0)
        row[d] = 0.0
        assert np.max(np.abs(row)) < 1e-14


def test_energy_is_squared_l2_norm():
    sysm = nssystem_for('dg-n', k=2)
    u = l2_project(sysm.V, lambda p: np.stack(
        [np.sin(p[:, 0]), p[:, 1]], axis=1))
    assert sysm.energy(u) == pytest.approx(
        l2_error(sysm.V, u, None)**2, rel=1e-12)


def test_dump_operator_round_trip(tmp_path):
    sysm = nssystem_for('dg-n')
    path = str(tmp_path / 'mass.mtx')
    dump_operator(sysm.M, path)
    M2 = mmread(path).tocsr()
    assert np.max(np.abs((M2 - sysm.M).toarray())) < 1e-12
