"""Mixed finite elements for coupled Darcy-Brinkman flow and heat transfer with viscous dissipation.

Vorticity, velocity, pressure and temperature are approximated in
``CG_{k+1} x RT_k x DG_k x CG_{k+1}`` (k = 0, 1) on triangular meshes; the
velocity is exactly divergence free at the discrete level.
"""

from .assembly import CoupledSystem, Loads, ModelParams, SolutionState, build_loads
from .harness import (
    ErrorReport,
    ErrorRow,
    compute_errors,
    convergence_study,
    export_vtk,
    report,
    run_property_suite,
)
from .manufactured import ManufacturedCase, exact_case_2d
from .mesh import Mesh, MeshError, Tag, build_rect_mesh, refine_uniform, tag_boundary
from .solver import ConvergenceError, SolverConfig, newton_solve, picard_solve
from .spaces import MixedSpaces, build_spaces

__all__ = [
    "ConvergenceError", "CoupledSystem", "ErrorReport", "ErrorRow", "Loads", "ManufacturedCase",
    "Mesh", "MeshError", "MixedSpaces", "ModelParams", "SolutionState", "SolverConfig", "Tag",
    "build_loads", "build_rect_mesh", "build_spaces", "compute_errors", "convergence_study",
    "exact_case_2d", "export_vtk", "newton_solve", "picard_solve", "refine_uniform", "report",
    "run_property_suite", "tag_boundary",
]
__version__ = "0.1.0"
