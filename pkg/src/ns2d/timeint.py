"""Implicit time integration and stationary solves for NSSystem.

Gauss-Legendre Runge-Kutta (1 or 2 stages) keeps the discrete kinetic
energy non-increasing for force-free, homogeneous-data problems; the
one-stage method coincides with the implicit midpoint (Crank-Nicolson)
scheme.  BDF2 is provided for comparison without an energy guarantee.

Every implicit step solves a coupled stage system in (velocity, stage
pressure, stage multiplier) by damped Newton; the new velocity is
recombined from the stage values through the inverse Butcher matrix, so
no extra right-hand side evaluations are needed.  Stage boundary data is
taken at the stage times.

The energy trace CSV has columns step,t,energy with energy = u^T M u.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .solver import NewtonConfig, newton_solve


@dataclass
class ButcherTableau:
    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def stages(self):
        return len(self.b)

    def condition_residual(self):
        """Max violation of the algebraic-stability conditions
        b_i b_j - b_i a_ij - b_j a_ji = 0 and sum(b) = 1."""
        M = (self.b[:, None] * self.b[None, :]
             - self.b[:, None] * self.A
             - self.b[None, :] * self.A.T)
        return max(float(np.abs(M).max()), abs(float(self.b.sum()) - 1.0))


def glrk_tableau(m):
    """Gauss-Legendre collocation tableau with m stages (m = 1 or 2)."""
    if m == 1:
        return ButcherTableau('glrk1', np.array([[0.5]]), np.array([1.0]),
                              np.array([0.5]))
    if m == 2:
        s = np.sqrt(3.0) / 6.0
        A = np.array([[0.25, 0.25 - s], [0.25 + s, 0.25]])
        return ButcherTableau('glrk2', A, np.array([0.5, 0.5]),
                              np.array([0.5 - s, 0.5 + s]))
    raise ValueError("Gauss-Legendre tableaux are provided for 1 or 2 "
                     "stages")


class StepFailure(RuntimeError):
    def __init__(self, msg, newton=None):
        super().__init__(msg)
        self.newton = newton

    def report(self):
        lines = [str(self)]
        if self.newton is not None:
            lines.append("iteration,residual_norm,step_norm")
            for i, r in enumerate(self.newton.residual_norms):
                s = self.newton.step_norms[i - 1] if i > 0 else 0.0
                lines.append(f"{i},{r:.6e},{s:.6e}")
        return "\n".join(lines)


def _wcol(sys):
    return sp.csr_matrix(
        (sys.w, (np.arange(sys.nq_dofs), np.zeros(sys.nq_dofs, dtype=int))),
        shape=(sys.nq_dofs, 1))


def glrk_step(sys, tab, u, t, tau, newton_cfg, p_guess=None):
    """One Gauss-Legendre step from (u, t) to t + tau.

    Returns (u_new, stage_pressures, stage_multipliers, newton_result).
    """
    m = tab.stages
    nu, nq = sys.nu_dofs, sys.nq_dofs
    nx = nu + nq + 1
    ts = t + tab.c * tau
    stage_loads = [sys.loads(ti) for ti in ts]
    wcol = _wcol(sys)
    bc = sys._bc_dofs
    bc_vals = [sys.bc_values(ti) for ti in ts] if bc is not None else None

    def split(X):
        out = []
        for i in range(m):
            s = X[i * nx:(i + 1) * nx]
            out.append((s[:nu], s[nu:nu + nq], s[nu + nq]))
        return out

    def rhs_u(Ui, Pi, i):
        F, _ = stage_loads[i]
        return F - sys.conv_apply(Ui, Ui) - sys.K0 @ Ui + sys.BT @ Pi

    def fun(X):
        st = split(X)
        G = [rhs_u(Ui, Pi, i) for i, (Ui, Pi, _) in enumerate(st)]
        R = np.empty(m * nx)
        for i, (Ui, Pi, li) in enumerate(st):
            Ru = sys.M @ (Ui - u)
            for j in range(m):
                Ru -= tau * tab.A[i, j] * G[j]
            if bc is not None:
                Ru[bc] = Ui[bc] - bc_vals[i]
            Rp = sys.B @ Ui + stage_loads[i][1] + sys.w * li
            R[i * nx:(i + 1) * nx] = np.concatenate([Ru, Rp, [sys.w @ Pi]])
        return R

    def jac(X):
        st = split(X)
        if m == 1:
            a = tau * tab.A[0, 0]
            return sys.stage_solver(st[0][0], 1.0, a, a, 1.0)
        Jc = [sys.conv_jac(Ui) for Ui, _, _ in st]
        blocks = [[None] * (3 * m) for _ in range(3 * m)]
        for i in range(m):
            for j in range(m):
                Juu = tau * tab.A[i, j] * (sys.K0 + Jc[j])
                JuP = -tau * tab.A[i, j] * sys.BT
                if i == j:
                    Juu = sys.M + Juu
                if bc is not None:
                    Juu = sys._keep @ Juu
                    JuP = sys._keep @ JuP
                    if i == j:
                        Juu = Juu + sys._put
                blocks[3 * i][3 * j] = Juu
                blocks[3 * i][3 * j + 1] = JuP
            blocks[3 * i + 1][3 * i] = sys.B
            blocks[3 * i + 1][3 * i + 2] = wcol
            blocks[3 * i + 2][3 * i + 1] = wcol.T
        return sp.bmat(blocks, format='csr')

    X0 = np.empty(m * nx)
    p0 = p_guess if p_guess is not None else np.zeros(nq)
    for i in range(m):
        X0[i * nx:(i + 1) * nx] = np.concatenate([u, p0, [0.0]])
    res = newton_solve(fun, jac, X0, newton_cfg)
    if not res.converged:
        raise StepFailure(
            f"stage solve failed at t={t:.6g}, tau={tau:.3g}", res)
    st = split(res.x)
    U = np.stack([s[0] for s in st])
    d = tab.b @ np.linalg.inv(tab.A)
    u_new = u + d @ (U - u[None, :])
    if bc is not None:
        vals_end = sys.bc_values(t + tau)
        u_new[bc] = vals_end
    P = [s[1] for s in st]
    lams = [float(s[2]) for s in st]
    return u_new, P, lams, res


def cn_step(sys, u, t, tau, newton_cfg, p_guess=None):
    """One Crank-Nicolson (implicit midpoint) step.

    The unknown is the end-of-step velocity; the convective and viscous
    terms act on the midpoint average and the pressure lives at the
    half-step.  Returns (u_new, p_half, lam, newton_result).
    """
    nu, nq = sys.nu_dofs, sys.nq_dofs
    tm = t + 0.5 * tau
    F, fb = sys.loads(tm)
    bc = sys._bc_dofs
    bv_end = sys.bc_values(t + tau) if bc is not None else None

    def fun(x):
        un, p, lam = x[:nu], x[nu:nu + nq], x[nu + nq]
        um = 0.5 * (u + un)
        Ru = sys.M @ (un - u) - tau * (
            F - sys.conv_apply(um, um) - sys.K0 @ um + sys.BT @ p)
        if bc is not None:
            Ru[bc] = un[bc] - bv_end
        Rp = sys.B @ um + fb + sys.w * lam
        return np.concatenate([Ru, Rp, [sys.w @ p]])

    def jac(x):
        um = 0.5 * (u + x[:nu])
        return sys.stage_solver(um, 1.0, 0.5 * tau, tau, 0.5)

    p0 = p_guess if p_guess is not None else np.zeros(nq)
    x0 = np.concatenate([u, p0, [0.0]])
    res = newton_solve(fun, jac, x0, newton_cfg)
    if not res.converged:
        raise StepFailure(
            f"midpoint solve failed at t={t:.6g}, tau={tau:.3g}", res)
    un = res.x[:nu]
    return un, res.x[nu:nu + nq], float(res.x[nu + nq]), res


def bdf2_step(sys, u_old, u, t, tau, newton_cfg, p_guess=None):
    """One BDF2 step using states at t - tau and t; fully implicit in
    the end-of-step values.  Returns (u_new, p_new, lam, newton_result)."""
    nu, nq = sys.nu_dofs, sys.nq_dofs
    te = t + tau
    F, fb = sys.loads(te)
    bc = sys._bc_dofs
    bv = sys.bc_values(te) if bc is not None else None

    def fun(x):
        un, p, lam = x[:nu], x[nu:nu + nq], x[nu + nq]
        Ru = sys.M @ (1.5 * un - 2.0 * u + 0.5 * u_old) - tau * (
            F - sys.conv_apply(un, un) - sys.K0 @ un + sys.BT @ p)
        if bc is not None:
            Ru[bc] = un[bc] - bv
        Rp = sys.B @ un + fb + sys.w * lam
        return np.concatenate([Ru, Rp, [sys.w @ p]])

    def jac(x):
        return sys.stage_solver(x[:nu], 1.5, tau, tau, 1.0)

    p0 = p_guess if p_guess is not None else np.zeros(nq)
    x0 = np.concatenate([u, p0, [0.0]])
    res = newton_solve(fun, jac, x0, newton_cfg)
    if not res.converged:
        raise StepFailure(
            f"BDF2 solve failed at t={t:.6g}, tau={tau:.3g}", res)
    un = res.x[:nu]
    return un, res.x[nu:nu + nq], float(res.x[nu + nq]), res


@dataclass
class TimeLoopConfig:
    tau: float
    T: float
    t0: float = 0.0
    integrator: str = 'cn'
    newton: NewtonConfig = field(
        default_factory=lambda: NewtonConfig(tol_abs=1e-8))
    energy_csv: str = None


@dataclass
class TimeResult:
    times: np.ndarray
    energy: np.ndarray
    u: np.ndarray
    p: np.ndarray
    p_time: float
    newton_iterations: int

    def energy_rows(self):
        return [(i, float(t), float(e))
                for i, (t, e) in enumerate(zip(self.times, self.energy))]


def write_energy_csv(rows, path):
    with open(path, 'w') as fh:
        fh.write("step,t,energy\n")
        for step, t, e in rows:
            fh.write(f"{step},{t!r},{e!r}\n")


def time_loop(sys, cfg, u0):
    """March the system from t0 to T; returns a TimeResult.

    The pressure returned is the last solved stage (or half-step)
    pressure together with the time it belongs to.  GLRK recombination
    makes the end-of-step velocity exact in the stage values, so the
    energy trace reflects the scheme's conservation identity.
    """
    nsteps_f = (cfg.T - cfg.t0) / cfg.tau
    nsteps = int(round(nsteps_f))
    if nsteps < 1 or abs(nsteps - nsteps_f) > 1e-8:
        raise ValueError("the step size must divide the time interval")
    integ = cfg.integrator
    if integ in ('glrk1', 'glrk2'):
        tab = glrk_tableau(int(integ[-1]))
    elif integ not in ('cn', 'bdf2'):
        raise ValueError(f"unknown integrator {integ!r}")
    u = np.asarray(u0, dtype=float).copy()
    p = np.zeros(sys.nq_dofs)
    p_time = cfg.t0
    u_old = None
    times = [cfg.t0]
    energy = [sys.energy(u)]
    t = cfg.t0
    nit = 0
    for step in range(nsteps):
        if integ == 'cn':
            un, p, lam, res = cn_step(sys, u, t, cfg.tau, cfg.newton, p)
            p_time = t + 0.5 * cfg.tau
        elif integ in ('glrk1', 'glrk2'):
            un, P, lams, res = glrk_step(sys, tab, u, t, cfg.tau,
                                         cfg.newton, p)
            p = P[-1]
            p_time = t + tab.c[-1] * cfg.tau
        else:
            if u_old is None:
                # bootstrap the two-step method with one midpoint step
                un, p, lam, res = cn_step(sys, u, t, cfg.tau, cfg.newton, p)
                p_time = t + 0.5 * cfg.tau
            else:
                un, p, lam, res = bdf2_step(sys, u_old, u, t, cfg.tau,
                                            cfg.newton, p)
                p_time = t + cfg.tau
        nit += res.iterations
        u_old = u
        u = un
        t = cfg.t0 + (step + 1) * cfg.tau
        times.append(t)
        energy.append(sys.energy(u))
    out = TimeResult(np.array(times), np.array(energy), u, p, p_time, nit)
    if cfg.energy_csv:
        write_energy_csv(out.energy_rows(), cfg.energy_csv)
    return out


def steady_solve(sys, newton_cfg=None, t=0.0, x0=None):
    """Solve the stationary system by damped Newton.

    Starting from zero velocity the first iteration is exactly a Stokes
    solve (the convective Jacobian vanishes), so no separate
    initialization is needed.  If the iteration fails at the target
    viscosity, a short continuation ladder (at most 4 solves at raised
    viscosity) restarts it from an easier problem.
    """
    cfg = newton_cfg if newton_cfg is not None else NewtonConfig(
        tol_abs=1e-10)
    x = sys.zero_state() if x0 is None else np.asarray(x0, dtype=float)
    loads = sys.loads(t)

    def run(xs):
        return newton_solve(lambda y: sys.residual(y, t, loads=loads),
                            lambda y: sys.linear_solver(y, t), xs, cfg)

    res = run(x)
    if res.converged:
        return res
    nu_target = sys.params.nu
    for fac in (64.0, 16.0, 4.0, 1.0):
        sys.set_nu(nu_target * fac)
        loads = sys.loads(t)
        res = run(x)
        x = res.x
        if not res.converged and fac > 1.0:
            sys.set_nu(nu_target)
            raise StepFailure(
                f"continuation failed at viscosity factor {fac}", res)
    sys.set_nu(nu_target)
    if not res.converged:
        raise StepFailure("stationary solve did not converge", res)
    return res
