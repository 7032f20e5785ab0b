"""Stokes and Bingham flow around reinforcing bars: fully resolved (DNS)
and two-scale homogenized finite element solvers.

The homogenized model couples Stokes flow outside a reinforced block to a
nonlinear Darcy law inside it; the seepage law is computed on the fly from
periodic unit-cell problems.
"""
from .constitutive import Bingham, Newtonian
from .exceptions import (AssemblyError, ConfigError, ConstraintError, ConvergenceError,
                         LineSearchError, MeshError, ReinflowError, SingularMatrixError)
from .macro import Scenario, SolveReport, solve, solve_coupled, solve_dns
from .mesh import BoundaryTag, Mesh, ObstacleGrid, Region
from .micro import HomogenizedLaw, RVEProblem, solve_boundary_layer
from .newton import SolverConfig

__version__ = "0.1.0"

__all__ = [
    "AssemblyError", "Bingham", "BoundaryTag", "ConfigError", "ConstraintError",
    "ConvergenceError", "HomogenizedLaw", "LineSearchError", "Mesh", "MeshError", "Newtonian",
    "ObstacleGrid", "RVEProblem", "ReinflowError", "Region", "Scenario", "SingularMatrixError",
    "SolveReport", "SolverConfig", "solve", "solve_boundary_layer", "solve_coupled", "solve_dns",
]
