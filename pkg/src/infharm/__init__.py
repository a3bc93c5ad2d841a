"""Numerical toolkit for the infinity-Laplace equation.

Lattice grids, closed-form solutions, the eps-ball mean-value solver, the
discrete p-Laplace energy minimizer, Lipschitz-extension verifiers and a
Tug-of-War simulator.
"""

from .analytic import catalog_entry, eval_catalog, infinity_laplacian_fd, mean_value_residual
from .errors import (ConfigError, DomainError, GridError, InfharmError, NonFiniteError,
                     OverflowRiskError, PreconditionError, SchemeError, StrategyError)
from .grid import BoundaryData, Grid, ball_stencil, boundary_trace, build_grid
from .lipschitz import (check_amle, check_cone_comparison, check_harnack, check_maximum_principle,
                        cone_suite, lipschitz_constant, mcshane_whitney, sphere_profile)
from .mv_solver import MVConfig, SchemeVariant, solve_mv, solve_sandwich
from .p_laplace import PSolveConfig, energy_p, p_sweep, solve_p
from .tug_of_war import (GameConfig, dpp_strategy, estimate_value, exact_value_1d, greedy_strategy,
                         play_game, random_strategy)

__version__ = "0.1.0"
