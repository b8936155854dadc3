"""Backward stochastic flows and Monte Carlo diagnostics."""

from .diagnostics import (
    FKEstimate,
    endpoint_variance_on_D,
    feynman_kac_estimate,
    fldiss_check,
    gaussian_shell,
    periodic_function,
    segment_crossing_times,
    start_grid,
    stopping_time_profile,
    two_cluster_diagnostic,
    variance_with_se,
)
from .ensemble import CHUNK, EnsembleSpec, TrajectoryBatch, backward_flow_ensemble, simulate

__all__ = [
    "CHUNK", "EnsembleSpec", "FKEstimate", "TrajectoryBatch", "backward_flow_ensemble",
    "endpoint_variance_on_D", "feynman_kac_estimate", "fldiss_check", "gaussian_shell",
    "periodic_function", "segment_crossing_times", "simulate", "start_grid",
    "stopping_time_profile", "two_cluster_diagnostic", "variance_with_se",
]
