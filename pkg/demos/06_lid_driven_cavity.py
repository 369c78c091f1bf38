"""Lid-driven cavity at Re = 100.

Solves the steady cavity flow, reports the Newton history and the
discrete divergence residual, and writes the two centerline velocity
profiles (u along the vertical midline, v along the horizontal one)
as CSV files for plotting.
"""

from ns2d import run_benchmark


def main():
    row = run_benchmark('cavity', scheme='dg-n', k=2, nx=24,
                        gamma=10.0, out_dir='cavity_out')
    print(f"dofs {row['dofs']}, newton iterations "
          f"{row['newton_iters']}, {row['seconds']:.1f} s")
    print(f"divergence residual {row['div_residual']:.2e}")
    for path in row['profiles']:
        with open(path) as fh:
            n = sum(1 for _ in fh) - 1
        print(f"wrote {path} ({n} samples)")


if __name__ == '__main__':
    main()
