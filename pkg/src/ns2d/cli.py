"""Command line front end: single benchmark runs and convergence
studies.

`ns-bench run` solves one cell and writes run.json (plus energy.csv for
dynamic problems and centerline CSVs for the cavity) into --out.
`ns-bench study --config file.yaml` runs a (k x mesh) table for one
benchmark and writes report.csv there as well.  The exit code is 0 only
if every requested cell solved.
"""

import argparse
import json
import os
import sys

import yaml

from .bench import (BENCHMARK_NAMES, run_benchmark, convergence_study,
                    write_report, gamma_sweep)


def _add_run_args(p):
    p.add_argument('--benchmark', required=True, choices=BENCHMARK_NAMES)
    p.add_argument('--scheme', default='dg-n',
                   choices=('dg-n', 'dg-c', 'h1'))
    p.add_argument('--k', type=int, default=1,
                   help='pressure degree (velocity is k+1)')
    p.add_argument('--nx', type=int, default=10)
    p.add_argument('--ny', type=int, default=None)
    p.add_argument('--gamma', type=float, default=0.0)
    p.add_argument('--gamma-gd', type=float, default=0.0)
    p.add_argument('--tensor', default=None,
                   choices=('grad', 'symgrad', 'deviatoric'),
                   help='default: grad for dg-c, deviatoric otherwise')
    p.add_argument('--integrator', default='cn',
                   choices=('cn', 'glrk1', 'glrk2', 'bdf2'))
    p.add_argument('--tau', type=float, default=None)
    p.add_argument('--T', type=float, default=None)
    p.add_argument('--nu', type=float, default=None)
    p.add_argument('--eta', type=float, default=None)
    p.add_argument('--zeta', type=float, default=0.5)
    p.add_argument('--out', default='.', help='output directory')


def _cmd_run(args):
    os.makedirs(args.out, exist_ok=True)
    try:
        row = run_benchmark(
            args.benchmark, scheme=args.scheme, k=args.k, nx=args.nx,
            ny=args.ny, gamma=args.gamma, gamma_gd=args.gamma_gd,
            tensor=args.tensor, eta=args.eta, zeta=args.zeta,
            integrator=args.integrator, tau=args.tau, T=args.T,
            nu=args.nu, out_dir=args.out)
    except Exception as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    msg = (f"{row['benchmark']} {row['scheme']} k={row['k']} "
           f"nx={row['nx']} h={row['h_max']:.4f} dofs={row['dofs']}")
    if row['err_u'] is not None:
        msg += f" err_u={row['err_u']:.3e}"
    if row['err_p'] is not None:
        msg += f" err_p={row['err_p']:.3e}"
    if 'div_residual' in row:
        msg += f" div_residual={row['div_residual']:.3e}"
    print(msg + f" [{row['seconds']:.1f}s]")
    return 0


def _cmd_study(args):
    with open(args.config) as fh:
        cfg = yaml.safe_load(fh)
    out = cfg.pop('out', '.')
    os.makedirs(out, exist_ok=True)
    name = cfg.pop('benchmark')
    sweep = cfg.pop('sweep', None)
    if sweep is not None:
        gammas = cfg.pop('gammas')
        which = sweep
        rows, trend = gamma_sweep(name, gammas, which=which, **cfg)
        with open(f"{out}/report.csv", 'w') as fh:
            fh.write("# " + json.dumps(
                {'benchmark': name, 'sweep': which, 'trend': trend})
                + "\n")
            fh.write(f"{which},err_u,seconds\n")
            for r in rows:
                fh.write(f"{float(r[which])!r},{float(r['err_u'])!r},"
                         f"{float(r['seconds'])!r}\n")
        print(f"{which} sweep on {name}: trend {trend}")
        return 0
    ks = cfg.pop('ks', [cfg.pop('k', 1)])
    nxs = cfg.pop('nxs')
    rows, meta = convergence_study(name, ks=ks, nxs=nxs, **cfg)
    write_report(rows, meta, f"{out}/report.csv")
    bad = [r for r in rows if r['status'] != 'ok']
    for r in rows:
        eu = 'n/a' if r['err_u'] is None else f"{r['err_u']:.3e}"
        ou = '---' if r['order_u'] is None else f"{r['order_u']:.2f}"
        print(f"k={r['k']} nx={r['nx']} err_u={eu} order={ou} "
              f"[{r['status']}]")
    return 1 if bad else 0


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog='ns-bench',
        description='incompressible flow benchmarks on triangular '
                    'meshes')
    sub = ap.add_subparsers(dest='command', required=True)
    pr = sub.add_parser('run', help='solve a single benchmark cell')
    _add_run_args(pr)
    ps = sub.add_parser('study', help='run a convergence study')
    ps.add_argument('--config', required=True,
                    help='YAML file with benchmark/ks/nxs plus any '
                         'run option')
    args = ap.parse_args(argv)
    if args.command == 'run':
        return _cmd_run(args)
    return _cmd_study(args)


if __name__ == '__main__':
    sys.exit(main())
