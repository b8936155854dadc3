"""Advection-diffusion on the torus and the checks built on it."""

from .experiments import (
    dissipation_ladder,
    kappa_ladder,
    ns3d_assemble,
    stream_ic_experiment,
    time_derivative_bound_check,
    velocity_stability_check,
)
from .solver import SolveResult, SolverConfig, initial_datum, solve_adv_diff, velocity_grid
