"""One steady benchmark, three discretizations.

Solves the Kovasznay wake flow (nu = 0.025) with the two discontinuous
schemes and the conforming Taylor-Hood pair on the same mesh and prints
the resulting errors side by side.  The nonconforming scheme carries
both penalty knobs; the conforming limit needs neither.
"""

from ns2d import run_benchmark

CASES = (
    ('dg-n', dict(gamma=10.0)),
    ('dg-c', dict(tensor='grad')),
    ('h1', dict()),
)


def main():
    print(f"{'scheme':6s} {'dofs':>6s} {'err_u':>10s} {'err_p':>10s} "
          f"{'newton':>6s} {'sec':>6s}")
    for scheme, kw in CASES:
        row = run_benchmark('kovasznay', scheme=scheme, k=2, nx=16, **kw)
        print(f"{scheme:6s} {row['dofs']:6d} {row['err_u']:10.3e} "
              f"{row['err_p']:10.3e} {row['newton_iters']:6d} "
              f"{row['seconds']:6.1f}")


if __name__ == '__main__':
    main()
