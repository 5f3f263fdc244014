"""P1 finite elements and tangent-plane time stepping for the Landau-Lifshitz-Gilbert equation."""

from .integrators import (
    FixedPointError,
    MidpointConfig,
    Problem,
    SimulationError,
    SolverConfig,
    Trajectory,
    evaluate_interpolant,
    run_simulation,
)
from .linsolve import LinearSolveConfig, LinearSolveError, solve_linear
from .mesh import Mesh, build_structured_mesh, mesh_stats, read_mesh, refine_uniform, write_mesh
from .problems import PROBLEMS, get_problem

__version__ = "0.1.0"

__all__ = [
    "FixedPointError",
    "LinearSolveConfig",
    "LinearSolveError",
    "Mesh",
    "MidpointConfig",
    "PROBLEMS",
    "Problem",
    "SimulationError",
    "SolverConfig",
    "Trajectory",
    "build_structured_mesh",
    "evaluate_interpolant",
    "get_problem",
    "mesh_stats",
    "read_mesh",
    "refine_uniform",
    "run_simulation",
    "solve_linear",
    "write_mesh",
]
