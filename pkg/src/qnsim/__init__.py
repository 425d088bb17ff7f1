"""Fast hyperelastic FEM simulation with a constant quasi-Newton system matrix.

Implicit (Backward Euler) time stepping is posed as a per-frame minimization.
Descent directions come from a prefactorized SPD matrix M/h^2 + L, optionally
boosted by L-BFGS or Chebyshev acceleration, with a Newton baseline for
reference solutions.
"""

from qnsim.linalg import Factorization, RotVarSVD, factorize_spd, solve_prefactored, svd_rv
from qnsim.mesh import SpringNetwork, TetMesh, load_obj_springs, load_tet_mesh
from qnsim.materials import MaterialModel, estimate_stiffness, make_builtin
from qnsim.dynamics import SimState, SimSystem, build_system
from qnsim.solvers import SolverConfig, relative_error, simulate_frame

__all__ = [
    "Factorization",
    "RotVarSVD",
    "factorize_spd",
    "solve_prefactored",
    "svd_rv",
    "TetMesh",
    "SpringNetwork",
    "load_tet_mesh",
    "load_obj_springs",
    "MaterialModel",
    "make_builtin",
    "estimate_stiffness",
    "SimSystem",
    "SimState",
    "build_system",
    "SolverConfig",
    "simulate_frame",
    "relative_error",
]
