"""Parameter estimation for the Ornstein-Uhlenbeck process."""

from .classical import (
    EstimateReport, KalmanRun, RegressionFit, estimate_ols, kalman_filter, kalman_mle, ols_fit,
    recover_params,
)
from .core import OUParams, PathSet, TimeGrid, analytic_cov, analytic_mean, simulate, step_coefficients

__all__ = [
    "EstimateReport", "KalmanRun", "OUParams", "PathSet", "RegressionFit", "TimeGrid",
    "analytic_cov", "analytic_mean", "estimate_ols", "kalman_filter", "kalman_mle", "ols_fit",
    "recover_params", "simulate", "step_coefficients",
]
