"""Benchmark problems and the convergence-study harness.

Four classical tests are bundled: the decaying Taylor-Green vortex on
[0, 2*pi]^2 (dynamic), the steady Kovasznay wake flow on
[-0.5, 1.5] x [0, 2], the steady potential flow of ten colliding jets on
[-1, 1]^2, and the lid-driven cavity on the unit square (no exact
solution).  The first three solve the Navier-Stokes system with zero
volume force; their exact fields supply both the Dirichlet data and the
error reference.

Error conventions mirror the usual reporting for the midpoint scheme:
velocity errors at the final time, pressure errors at the time the last
solved pressure lives at (T - tau/2 for cn/glrk1, T for bdf2); two-stage
Gauss runs report the velocity error only.  Pressure errors compare
mean-shifted fields since the discrete pressure has zero mean.

A convergence report is a list of row dicts plus a metadata dict; it is
written as CSV with the metadata JSON on a leading '#' comment line, and
`read_report` round-trips that file.
"""

import json
import time

import numpy as np

from .mesh import build_rect_mesh, FaceTopology
from .space import build_space, l2_project, l2_error, locate_points, \
    eval_field
from .forms import SchemeParams, BoundaryData, NSSystem
from .solver import NewtonConfig
from .timeint import TimeLoopConfig, time_loop, steady_solve, \
    write_energy_csv

BENCHMARK_NAMES = ('taylor-green', 'kovasznay', 'potential', 'cavity')


class Benchmark:
    """A named flow problem: domain box, data, and exact fields if any.

    exact_u and exact_p are callables (t, pts) -> values, or None.
    """

    def __init__(self, name, box, nu, dynamic, T, tau, exact_u, exact_p,
                 bdata, fvol=None):
        self.name = name
        self.box = box
        self.nu = nu
        self.dynamic = dynamic
        self.T = T
        self.tau = tau
        self.exact_u = exact_u
        self.exact_p = exact_p
        self.bdata = bdata
        self.fvol = fvol


def kovasznay_lambda(nu):
    return 0.5 / nu - np.sqrt(0.25 / nu**2 + 4.0 * np.pi**2)


def make_benchmark(name, nu=None):
    """Build one of the named benchmarks, optionally at another
    viscosity.  Defaults: taylor-green nu=0.01, T=1, tau=0.01;
    kovasznay and potential nu=0.025 (steady); cavity nu=0.01 (Re=100).
    """
    if name == 'taylor-green':
        nu = 0.01 if nu is None else nu

        def uex(t, pts):
            x, y = pts[..., 0], pts[..., 1]
            d = np.exp(-2.0 * nu * t)
            return np.stack([np.sin(x) * np.cos(y) * d,
                             -np.cos(x) * np.sin(y) * d], axis=-1)

        def pex(t, pts):
            x, y = pts[..., 0], pts[..., 1]
            return 0.25 * (np.cos(2 * x) + np.cos(2 * y)) * np.exp(
                -4.0 * nu * t)

        return Benchmark(name, (0.0, 2 * np.pi, 0.0, 2 * np.pi), nu,
                         True, 1.0, 0.01, uex, pex,
                         BoundaryData(lambda t, pts: uex(t, pts)))
    if name == 'kovasznay':
        nu = 0.025 if nu is None else nu
        lam = kovasznay_lambda(nu)
        # additive constant makes the exact pressure mean-zero on the box
        pshift = -(np.exp(-lam) - np.exp(3 * lam)) / (8 * lam)

        def uex(t, pts):
            x, y = pts[..., 0], pts[..., 1]
            e = np.exp(lam * x)
            return np.stack([1.0 - e * np.cos(2 * np.pi * y),
                             (lam / (2 * np.pi)) * e
                             * np.sin(2 * np.pi * y)], axis=-1)

        def pex(t, pts):
            return -0.5 * np.exp(2 * lam * pts[..., 0]) + pshift

        return Benchmark(name, (-0.5, 1.5, 0.0, 2.0), nu, False, 0.0,
                         0.0, uex, pex,
                         BoundaryData(lambda t, pts: uex(t, pts)))
    if name == 'potential':
        nu = 0.025 if nu is None else nu

        def uex(t, pts):
            x, y = pts[..., 0], pts[..., 1]
            return np.stack([5 * x**4 - 30 * x**2 * y**2 + 5 * y**4,
                             -20 * x**3 * y + 20 * x * y**3], axis=-1)

        def pex(t, pts):
            u = uex(t, pts)
            return -0.5 * (u[..., 0]**2 + u[..., 1]**2)

        return Benchmark(name, (-1.0, 1.0, -1.0, 1.0), nu, False, 0.0,
                         0.0, uex, pex,
                         BoundaryData(lambda t, pts: uex(t, pts)))
    if name == 'cavity':
        nu = 0.01 if nu is None else nu

        def lid(t, pts):
            # geometric lid data: the corner nodes of a conforming space
            # take the lid value (edge quadrature never hits corners, so
            # the weak enforcement is unaffected)
            top = pts[..., 1] >= 1.0 - 1e-12
            return np.stack([np.where(top, 1.0, 0.0),
                             np.zeros(pts.shape[:-1])], axis=-1)

        return Benchmark(name, (0.0, 1.0, 0.0, 1.0), nu, False, 0.0,
                         0.0, None, None, BoundaryData(lid))
    raise ValueError(f"unknown benchmark {name!r}; valid names are "
                     f"{', '.join(BENCHMARK_NAMES)}")


def _build_system(bench, scheme, k, nx, ny, gamma, gamma_gd, tensor,
                  eta, zeta):
    if ny is None:
        ny = nx
    x0, x1, y0, y1 = bench.box
    mesh = build_rect_mesh(x0, x1, y0, y1, nx, ny)
    topo = FaceTopology(mesh)
    family = 'cg' if scheme == 'h1' else 'dg'
    V = build_space(mesh, family, k + 1, ncomp=2, topo=topo)
    Q = build_space(mesh, family, k, ncomp=1, topo=topo)
    if tensor is None:
        tensor = 'grad' if scheme == 'dg-c' else 'deviatoric'
    params = SchemeParams(scheme=scheme, tensor=tensor, nu=bench.nu,
                          eta=eta, zeta=zeta, gamma=gamma,
                          gamma_gd=gamma_gd)
    sysm = NSSystem(V, Q, params, bdata=bench.bdata, fvol=bench.fvol)
    return mesh, V, Q, sysm


def _cavity_profiles(V, u, out_dir, n=201):
    """Centerline velocity profiles of the cavity: u1 along x1=0.5 and
    u2 along x2=0.5, written as two CSV files."""
    s = np.linspace(0.0, 1.0, n)
    eps = 1e-12  # nudge endpoints inside the mesh
    sc = np.clip(s, eps, 1.0 - eps)
    paths = []
    for fname, cols, pts, comp in (
            ('centerline_u1.csv', 'x2,u1',
             np.column_stack([np.full(n, 0.5), sc]), 0),
            ('centerline_u2.csv', 'x1,u2',
             np.column_stack([sc, np.full(n, 0.5)]), 1)):
        elems, ref = locate_points(V.mesh, pts)
        vals = eval_field(V, u, elems, ref)
        path = f"{out_dir}/{fname}"
        with open(path, 'w') as fh:
            fh.write(cols + "\n")
            for si, vi in zip(s, vals[:, comp]):
                fh.write(f"{float(si)!r},{float(vi)!r}\n")
        paths.append(path)
    return paths


def run_benchmark(bench, scheme='dg-n', k=1, nx=10, ny=None, gamma=0.0,
                  gamma_gd=0.0, tensor=None, eta=None, zeta=0.5,
                  integrator='cn', tau=None, T=None, nu=None,
                  newton_tol=None, out_dir=None):
    """Solve one benchmark cell and return a result row dict.

    `bench` is a Benchmark or one of the names.  Errors are None when no
    exact solution exists (cavity) and the pressure error is None for
    glrk2 runs.  With out_dir set, run.json plus energy.csv (dynamic) or
    centerline CSVs (cavity) are written there.
    """
    if isinstance(bench, str):
        bench = make_benchmark(bench, nu)
    mesh, V, Q, sysm = _build_system(bench, scheme, k, nx, ny, gamma,
                                     gamma_gd, tensor, eta, zeta)
    row = {'benchmark': bench.name, 'scheme': scheme, 'k': k, 'nx': nx,
           'ny': nx if ny is None else ny, 'h_max': mesh.h_max,
           'dofs': sysm.ntot, 'err_u': None, 'order_u': None,
           'err_p': None, 'order_p': None, 'newton_iters': 0,
           'seconds': 0.0, 'status': 'ok'}
    t0 = time.perf_counter()
    energy_rows = None
    if bench.dynamic:
        cfg = TimeLoopConfig(
            tau=bench.tau if tau is None else tau,
            T=bench.T if T is None else T, integrator=integrator,
            newton=NewtonConfig(
                tol_abs=1e-8 if newton_tol is None else newton_tol))
        u0 = l2_project(V, lambda pts: bench.exact_u(0.0, pts))
        out = time_loop(sysm, cfg, u0)
        u, p, p_time = out.u, out.p, out.p_time
        t_end = cfg.T
        row['newton_iters'] = out.newton_iterations
        energy_rows = out.energy_rows()
    else:
        res = steady_solve(sysm, NewtonConfig(
            tol_abs=1e-10 if newton_tol is None else newton_tol))
        u, p, lam = sysm.split(res.x)
        p_time = t_end = 0.0
        row['newton_iters'] = res.iterations
    row['seconds'] = time.perf_counter() - t0
    if bench.exact_u is not None:
        row['err_u'] = l2_error(V, u, lambda pts: bench.exact_u(
            t_end, pts))
        if not (bench.dynamic and integrator == 'glrk2'):
            row['err_p'] = l2_error(Q, p, lambda pts: bench.exact_p(
                p_time, pts), zero_mean=True)
    else:
        F, fb = sysm.loads(t_end)
        row['div_residual'] = float(np.linalg.norm(sysm.B @ u + fb))
    if out_dir is not None:
        if energy_rows is not None:
            write_energy_csv(energy_rows, f"{out_dir}/energy.csv")
        if bench.name == 'cavity':
            row['profiles'] = _cavity_profiles(V, u, out_dir)
        meta = dict(row)
        meta.update(gamma=gamma, gamma_gd=gamma_gd,
                    tensor=tensor or ('grad' if scheme == 'dg-c'
                                      else 'deviatoric'),
                    integrator=integrator if bench.dynamic else 'steady',
                    nu=bench.nu, tau=tau, T=T)
        with open(f"{out_dir}/run.json", 'w') as fh:
            json.dump(meta, fh, indent=1)
    return row


REPORT_COLUMNS = ('benchmark', 'scheme', 'k', 'nx', 'ny', 'h_max',
                  'dofs', 'err_u', 'order_u', 'err_p', 'order_p',
                  'newton_iters', 'seconds', 'status')


def convergence_study(bench, scheme='dg-n', ks=(1,), nxs=(10, 20),
                      **kw):
    """Run a (k x mesh) table of benchmark cells and attach observed
    orders between consecutive meshes within each k block.

    Returns (rows, meta).  A failing cell is recorded with status
    'failed' and the study continues.
    """
    if len(nxs) < 2:
        raise ValueError("a convergence study needs at least 2 meshes")
    if isinstance(bench, str):
        bench = make_benchmark(bench, kw.pop('nu', None))
    rows = []
    for k in ks:
        prev = None
        for nx in nxs:
            try:
                row = run_benchmark(bench, scheme=scheme, k=k, nx=nx,
                                    **kw)
            except Exception as exc:
                row = {'benchmark': bench.name, 'scheme': scheme,
                       'k': k, 'nx': nx, 'ny': nx, 'h_max': None,
                       'dofs': None, 'err_u': None, 'order_u': None,
                       'err_p': None, 'order_p': None,
                       'newton_iters': 0, 'seconds': 0.0,
                       'status': f'failed: {exc}'}
            if prev is not None and row['status'] == 'ok' \
                    and prev['status'] == 'ok':
                r = np.log(prev['h_max'] / row['h_max'])
                for e, o in (('err_u', 'order_u'), ('err_p', 'order_p')):
                    if row[e] and prev[e]:
                        row[o] = float(np.log(prev[e] / row[e]) / r)
            rows.append(row)
            prev = row
    meta = {'benchmark': bench.name, 'scheme': scheme, 'nu': bench.nu,
            'ks': list(ks), 'nxs': list(nxs),
            'params': {key: (val if not callable(val) else str(val))
                       for key, val in kw.items()},
            'versions': {'numpy': np.__version__}}
    return rows, meta


def write_report(rows, meta, path):
    """Write a convergence report as CSV with a '#'-prefixed JSON
    metadata line on top."""
    def fmt(v):
        # float() strips numpy scalar types whose repr is not parseable
        return '' if v is None else repr(float(v)) if isinstance(v, float) \
            else str(v)

    with open(path, 'w') as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(fmt(row.get(c)) for c in REPORT_COLUMNS)
                     + "\n")


def read_report(path):
    """Parse a report written by write_report; returns (rows, meta)."""
    ints = {'k', 'nx', 'ny', 'dofs', 'newton_iters'}
    floats = {'h_max', 'err_u', 'order_u', 'err_p', 'order_p',
              'seconds'}
    rows = []
    meta = {}
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("#"):
            meta = json.loads(first[1:])
            header = fh.readline()
        else:
            header = first
        cols = header.strip().split(",")
        for line in fh:
            vals = line.rstrip("\n").split(",")
            row = {}
            for c, v in zip(cols, vals):
                if v == '':
                    row[c] = None
                elif c in ints:
                    row[c] = int(v)
                elif c in floats:
                    row[c] = float(v)
                else:
                    row[c] = v
            rows.append(row)
    return rows, meta


def gamma_sweep(bench, gammas, which='gamma', scheme='dg-n', k=2,
                nx=32, **kw):
    """Velocity error against the penalty coefficient.

    `which` selects the swept coefficient ('gamma' or 'gamma_gd'); the
    other one stays at its keyword value (default 0).  Returns (rows,
    trend) where trend is 'decreasing', 'increasing' or 'mixed'.
    """
    if which not in ('gamma', 'gamma_gd'):
        raise ValueError("which must be 'gamma' or 'gamma_gd'")
    if isinstance(bench, str):
        bench = make_benchmark(bench, kw.pop('nu', None))
    if bench.exact_u is None:
        raise ValueError("gamma_sweep needs a benchmark with an exact "
                         "solution")
    rows = []
    for g in gammas:
        kws = dict(kw)
        kws[which] = g
        row = run_benchmark(bench, scheme=scheme, k=k, nx=nx, **kws)
        rows.append({which: g, 'err_u': row['err_u'],
                     'seconds': row['seconds']})
    errs = [r['err_u'] for r in rows]
    d = np.diff(errs)
    trend = ('decreasing' if np.all(d < 0) else
             'increasing' if np.all(d > 0) else 'mixed')
    return rows, trend
