"""Born-Infeld electrostatics on grids: potentials, equilibrium measures, radial oracles."""

__version__ = "0.1.0"

from .geometry import DomainSpec, Grid, GridFunction, BoundaryMesh, build_grid, build_boundary_mesh
from .functionals import alpha_coefficients, bi_action, truncated_action, energy_K, energy_Kn, make_model
from .measures import BoundaryMeasure, uniform_measure, mollify, total_variation
from .potential_solver import (
    SolverConfig,
    SolveReport,
    solve_potential,
    solve_exterior_dirichlet,
    normal_derivative,
    measure_from_normal_derivative,
    richardson,
)
from .radial import lambda_star, radial_potential, radial_upsilon, invert_constitutive
from .equilibrium import (
    EquilibriumResult,
    frank_wolfe_equilibrium,
    lambda_bisection_equilibrium,
    cross_validate,
    equilibrium_diagnostics,
    hierarchy_sweep,
)
from .ballcheck import uniformity_deviation, characterization_experiment
