"""Unified continuous/discontinuous Galerkin solver for the 2D
incompressible Navier-Stokes equations.

Three inf-sup stable velocity/pressure pairs share one code path:
equal-mesh discontinuous P_{k+1}/P_k with either a skew-stabilized
upwind convection form (dg-n) or a plainly upwinded one (dg-c), and the
conforming Taylor-Hood pair (h1).  Implicit Gauss-Legendre
Runge-Kutta stepping preserves the discrete energy inequality; BDF2 and
the midpoint rule are available alongside.
"""

from .mesh import Mesh, FaceTopology, build_rect_mesh, mesh_from_file, \
    write_mesh
from .basis import triangle_quadrature, edge_quadrature, ModalBasis, \
    NodalBasis
from .space import FunctionSpace, build_space, l2_project, l2_error, \
    mean_value, eval_field, locate_points, dump_field_csv
from .forms import SchemeParams, BoundaryData, NSSystem, assemble_mass, \
    assemble_viscous, assemble_bh, assemble_dh, assemble_convective, \
    convective_apply, convective_jacobian, assemble_volume_load, \
    assemble_boundary_loads, mean_weights, dump_operator
from .solver import SolverError, NewtonConfig, NewtonResult, \
    newton_solve, solve_linear, augment_mean_constraint, SaddleSolver
from .timeint import ButcherTableau, glrk_tableau, glrk_step, cn_step, \
    bdf2_step, time_loop, TimeLoopConfig, TimeResult, steady_solve, \
    StepFailure, write_energy_csv
from .bench import Benchmark, make_benchmark, run_benchmark, \
    convergence_study, gamma_sweep, write_report, read_report, \
    kovasznay_lambda

__version__ = "0.1.0"

__all__ = [
    "Mesh", "FaceTopology", "build_rect_mesh", "mesh_from_file",
    "write_mesh", "triangle_quadrature", "edge_quadrature",
    "ModalBasis", "NodalBasis", "FunctionSpace", "build_space",
    "l2_project", "l2_error", "mean_value", "eval_field",
    "locate_points", "dump_field_csv", "SchemeParams", "BoundaryData",
    "NSSystem", "assemble_mass", "assemble_viscous", "assemble_bh",
    "assemble_dh", "assemble_convective", "convective_apply",
    "convective_jacobian", "assemble_volume_load",
    "assemble_boundary_loads", "mean_weights", "dump_operator",
    "SolverError", "NewtonConfig", "NewtonResult", "newton_solve",
    "solve_linear", "augment_mean_constraint", "SaddleSolver",
    "ButcherTableau", "glrk_tableau", "glrk_step", "cn_step",
    "bdf2_step", "time_loop", "TimeLoopConfig", "TimeResult",
    "steady_solve", "StepFailure", "write_energy_csv", "Benchmark",
    "make_benchmark", "run_benchmark", "convergence_study",
    "gamma_sweep", "write_report", "read_report", "kovasznay_lambda",
]
