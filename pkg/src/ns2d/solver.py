"""Linear solves for bordered saddle systems and a damped Newton iteration.

The Newton linearizations all share one block shape: a velocity block F,
a pressure-gradient block G, a divergence block Bc and a scalar border w
pinning the pressure mean.  Small systems are assembled and LU-factored
directly.  Mid-size systems factor F alone and solve the pressure Schur
complement with preconditioned GMRES (the full factorization of a saddle
matrix fills far worse than its velocity block).  Systems whose velocity
factorization does not fit in memory fall back to GMRES on the whole
block system with an incomplete-LU / pressure-mass preconditioner.

Newton uses plain step halving: a step is cut until the residual norm
decreases, up to a bounded number of halvings.  Iteration traces can be
written as CSV (iteration, residual norm, step norm) for postmortems;
identical inputs give bit-identical traces.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    pass


def solve_linear(A, b, check=True, rel_tol=1e-8):
    """Solve the sparse system A x = b by LU factorization.

    Verifies the backward residual ||Ax - b|| against the system scale
    and raises SolverError with diagnostics on breakdown.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise SolverError(f"shape mismatch: matrix {A.shape}, rhs {len(b)}")
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(
            f"LU factorization failed ({exc}); n={A.shape[0]}, "
            f"nnz={A.nnz}") from exc
    x = lu.solve(b)
    if check:
        if not np.all(np.isfinite(x)):
            raise SolverError(
                f"singular system: non-finite solution; n={A.shape[0]}, "
                f"nnz={A.nnz}")
        r = np.linalg.norm(A @ x - b)
        amax = np.abs(A.data).max() if A.nnz else 0.0
        scale = np.linalg.norm(b) + amax * np.linalg.norm(x) + 1e-300
        if r > rel_tol * scale:
            raise SolverError(
                f"direct solve inaccurate: ||Ax-b||={r:.3e} vs scale "
                f"{scale:.3e}; n={A.shape[0]}, nnz={A.nnz}")
    return x


def augment_mean_constraint(A, b, w):
    """Border a system with one scalar constraint row/column w.

    Returns (A', b') where A' = [[A, w], [w^T, 0]] and b' appends a zero;
    used to pin the pressure mean through a Lagrange multiplier.
    """
    w = np.asarray(w, dtype=float)
    n = A.shape[0]
    if len(w) != n:
        raise ValueError("constraint vector length must match the system")
    col = sp.csr_matrix((w, (np.arange(n), np.zeros(n, dtype=int))),
                        shape=(n, 1))
    A2 = sp.bmat([[A, col], [col.T, None]], format='csr')
    b2 = np.concatenate([np.asarray(b, dtype=float), [0.0]])
    return A2, b2


# fill growth of the velocity-block LU measured on this discretization
# family (nnz, factor entries), and SuperLU's peak bytes per factor entry
_FILL_REF = (7.2e6, 143e6)
_SPLU_BYTES = 22.0
_SPLU_BUDGET = 2.5e9


def _estimated_splu_bytes(nnz):
    ref_nnz, ref_fill = _FILL_REF
    return _SPLU_BYTES * ref_fill * (nnz / ref_nnz) ** 1.4


class SaddleSolver:
    """Factored solver for one bordered saddle system

        [F   G   0] [du]   [ru]
        [Bc  0   w] [dp] = [rp]
        [0   w^T 0] [dl]   [rl]

    with F the velocity block, G the pressure gradient, Bc the divergence
    constraint and w the pressure-mean border.  Mode 'direct' assembles
    and LU-factors the whole matrix; 'schur' factors F alone and solves
    the bordered pressure Schur complement -Bc F^{-1} G by GMRES; 'ilu'
    (for systems whose velocity factorization does not fit in memory)
    runs GMRES on the full block system with an incomplete factorization
    of F.  Both iterative modes precondition the pressure with
    scale * inv(diag Mp); scale ~ viscosity matches diffusion-dominated
    F, which covers the stationary solves where these sizes occur.
    'auto' picks the mode from the system size and the projected
    factorization memory.
    """

    def __init__(self, F, G, Bc, w, mp_diag=None, scale=1.0, mode='auto',
                 rtol=None, restart=200, maxcycles=10, ilu_drop=1e-5,
                 ilu_fill=10.0):
        F = sp.csr_matrix(F)
        G = sp.csr_matrix(G)
        Bc = sp.csr_matrix(Bc)
        w = np.asarray(w, dtype=float)
        self.n, self.nq = F.shape[0], Bc.shape[0]
        self.ntot = self.n + self.nq + 1
        if mode == 'auto':
            if self.ntot <= 25000:
                mode = 'direct'
            elif _estimated_splu_bytes(F.nnz) <= _SPLU_BUDGET:
                mode = 'schur'
            else:
                mode = 'ilu'
        self.mode = mode
        self.rtol = rtol if rtol is not None else (
            1e-6 if mode == 'ilu' else 1e-10)
        self.restart = restart
        self.maxcycles = maxcycles
        self.last_iterations = 0
        self._F, self._G, self._Bc, self._w = F, G, Bc, w
        if mode == 'direct':
            wcol = sp.csr_matrix(
                (w, (np.arange(self.nq), np.zeros(self.nq, dtype=int))),
                shape=(self.nq, 1))
            J = sp.bmat([[F, G, None], [Bc, None, wcol],
                         [None, wcol.T, None]], format='csc')
            try:
                self._lu = spla.splu(J)
            except RuntimeError as exc:
                raise SolverError(
                    f"LU factorization failed ({exc}); n={self.ntot}, "
                    f"nnz={J.nnz}") from exc
            return
        if mp_diag is None:
            raise ValueError("iterative saddle modes need the pressure "
                             "mass diagonal")
        mp_diag = np.asarray(mp_diag, dtype=float)
        if mp_diag.min() <= 0.0:
            raise ValueError("pressure mass diagonal must be positive")
        self._pd = scale / mp_diag
        self._sw = self._pd * w
        self._denom = w @ self._sw
        if mode == 'schur':
            try:
                self._Flu = spla.splu(F.tocsc())
            except RuntimeError as exc:
                raise SolverError(
                    f"velocity block factorization failed ({exc}); "
                    f"n={self.n}, nnz={F.nnz}") from exc
        elif mode == 'ilu':
            self._Filu = spla.spilu(F.tocsc(), drop_tol=ilu_drop,
                                    fill_factor=ilu_fill)
        else:
            raise ValueError(f"unknown saddle solver mode '{mode}'")

    # exact solve of the preconditioner block [[Mp/scale, w], [w^T, 0]]
    def _border_solve(self, zp, zl):
        y = self._pd * zp
        dl = (self._w @ y - zl) / self._denom
        return y - self._sw * dl, dl

    def _apply(self, x):
        du, dp, dl = x[:self.n], x[self.n:self.n + self.nq], x[-1]
        ru = self._F @ du + self._G @ dp
        rp = self._Bc @ du + self._w * dl
        return np.concatenate([ru, rp, [self._w @ dp]])

    def _gmres(self, op, rhs, prec, x0=None):
        its = [0]

        def cb(_):
            its[0] += 1

        x, info = spla.gmres(op, rhs, x0=x0, M=prec, rtol=self.rtol,
                             atol=0.0, restart=self.restart,
                             maxiter=self.maxcycles, callback=cb,
                             callback_type='pr_norm')
        if info == 0:
            self.last_iterations += its[0]
            return x
        if info > 0:
            # one budget extension from the current iterate
            x, info = spla.gmres(op, rhs, x0=x, M=prec, rtol=self.rtol,
                                 atol=0.0, restart=self.restart,
                                 maxiter=self.maxcycles, callback=cb,
                                 callback_type='pr_norm')
        self.last_iterations += its[0]
        if info != 0:
            raise SolverError(
                f"saddle GMRES ({self.mode}) failed to reach rtol "
                f"{self.rtol:.1e} in {its[0]} iterations (info={info})")
        return x

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if len(rhs) != self.ntot:
            raise SolverError(f"rhs length {len(rhs)} does not match "
                              f"system size {self.ntot}")
        if self.mode == 'direct':
            x = self._lu.solve(rhs)
        else:
            n, nq = self.n, self.nq
            ru, rp, rl = rhs[:n], rhs[n:n + nq], rhs[-1]
            if self.mode == 'schur':
                y = self._Flu.solve(ru)
                srhs = np.concatenate([rp - self._Bc @ y, [rl]])

                def smat(z):
                    dp, dl = z[:nq], z[-1]
                    t = self._Flu.solve(self._G @ dp)
                    return np.concatenate(
                        [-self._Bc @ t + self._w * dl, [self._w @ dp]])

                def sprec(z):
                    dp, dl = self._border_solve(z[:nq], z[-1])
                    return np.concatenate([dp, [dl]])

                op = spla.LinearOperator((nq + 1, nq + 1), smat)
                prec = spla.LinearOperator((nq + 1, nq + 1), sprec)
                z = self._gmres(op, srhs, prec)
                dp = z[:nq]
                du = self._Flu.solve(ru - self._G @ dp)
                x = np.concatenate([du, dp, [z[-1]]])
            else:
                def fprec(r):
                    zp, zl = self._border_solve(r[n:n + nq], r[-1])
                    zu = self._Filu.solve(r[:n] - self._G @ zp)
                    return np.concatenate([zu, zp, [zl]])

                op = spla.LinearOperator((self.ntot, self.ntot),
                                         self._apply)
                prec = spla.LinearOperator((self.ntot, self.ntot), fprec)
                x = self._gmres(op, rhs, prec)
        if not np.all(np.isfinite(x)):
            raise SolverError(f"singular saddle system ({self.mode}): "
                              "non-finite solution")
        r = np.linalg.norm(self._apply(x) - rhs)
        amax = max(np.abs(b.data).max() if b.nnz else 0.0
                   for b in (self._F, self._G, self._Bc))
        scale = np.linalg.norm(rhs) + amax * np.linalg.norm(x) + 1e-300
        if r > max(1e-8, 100.0 * self.rtol) * scale:
            raise SolverError(
                f"saddle solve ({self.mode}) inaccurate: ||Ax-b||={r:.3e} "
                f"vs scale {scale:.3e}; n={self.ntot}")
        return x


@dataclass
class NewtonConfig:
    tol_abs: float = 1e-10
    tol_rel: float = 0.0
    max_iter: int = 30
    max_halvings: int = 8


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual_norms: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)

    def write_trace(self, path):
        with open(path, 'w') as fh:
            fh.write("iteration,residual_norm,step_norm\n")
            for i, r in enumerate(self.residual_norms):
                s = self.step_norms[i - 1] if i > 0 else 0.0
                fh.write(f"{i},{float(r)!r},{float(s)!r}\n")


def newton_solve(fun, jac, x0, config=None):
    """Damped Newton iteration on fun(x) = 0 with Jacobian jac(x).

    jac may return either a sparse matrix or a factored solver exposing
    .solve(rhs) (such as SaddleSolver).  Convergence when
    ||fun|| <= max(tol_abs, tol_rel * ||fun(x0)||).  Each step is halved
    (up to max_halvings) until the residual norm decreases; two
    consecutive non-decreasing steps abort the iteration.
    """
    cfg = config if config is not None else NewtonConfig()
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    rn = np.linalg.norm(r)
    res = NewtonResult(x, False, 0, [rn], [])
    gate = max(cfg.tol_abs, cfg.tol_rel * rn)
    stagnant = 0
    for it in range(cfg.max_iter):
        if rn <= gate:
            res.converged = True
            break
        J = jac(x)
        if hasattr(J, 'solve'):
            step = J.solve(-r)
        else:
            step = solve_linear(J, -r)
        # release the factorization before the next one is built
        J = None
        alpha = 1.0
        best = None
        for _ in range(cfg.max_halvings + 1):
            xt = x + alpha * step
            rt = fun(xt)
            rtn = np.linalg.norm(rt)
            if best is None or rtn < best[2]:
                best = (xt, rt, rtn, alpha)
            if rtn < rn * (1.0 - 1e-4 * alpha) or rtn <= gate:
                break
            alpha *= 0.5
        xt, rt, rtn, alpha = best
        stagnant = stagnant + 1 if rtn >= rn else 0
        x, r, rn = xt, rt, rtn
        res.iterations = it + 1
        res.residual_norms.append(rn)
        res.step_norms.append(alpha * np.linalg.norm(step))
        if stagnant >= 2:
            break
    else:
        res.converged = rn <= gate
    if rn <= gate:
        res.converged = True
    res.x = x
    return res
