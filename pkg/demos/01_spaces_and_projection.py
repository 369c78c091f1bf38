"""Meshes, broken/conforming spaces, and L2 projection.

Builds a crossed-triangle rectangle mesh, projects a smooth field into
discontinuous and conforming spaces, and shows the expected order k+1
decay of the projection error under mesh refinement.
"""

import numpy as np

from ns2d import build_rect_mesh, build_space, l2_project, l2_error


def field(pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([np.sin(np.pi * x) * np.cos(np.pi * y),
                     np.cos(np.pi * x) * np.sin(np.pi * y)], axis=1)


def main():
    for family in ('dg', 'cg'):
        for degree in (1, 2, 3):
            errs = []
            for n in (4, 8, 16):
                mesh = build_rect_mesh(0.0, 1.0, 0.0, 1.0, n, n)
                V = build_space(mesh, family, degree, ncomp=2)
                u = l2_project(V, field)
                errs.append(l2_error(V, u, field))
            orders = [np.log2(errs[i] / errs[i + 1])
                      for i in range(len(errs) - 1)]
            print(f"{family} P{degree}: errors "
                  + " ".join(f"{e:.3e}" for e in errs)
                  + "  orders "
                  + " ".join(f"{o:.2f}" for o in orders))


if __name__ == '__main__':
    main()
