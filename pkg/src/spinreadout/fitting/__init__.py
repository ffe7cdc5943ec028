"""Nonlinear least squares and the experiment-specific fit models."""

from .engine import FitProblem, FitResult, least_squares, numeric_jacobian
from .models import (
    NotchFit,
    biexp_model,
    coupled_model,
    fit_biexponential,
    fit_coupled,
    fit_nonlinear_gt,
    fit_notch,
    fit_qgaussian,
    gt_model,
    notch_model,
    qgaussian_model,
)

__all__ = [
    "FitProblem",
    "FitResult",
    "NotchFit",
    "biexp_model",
    "coupled_model",
    "fit_biexponential",
    "fit_coupled",
    "fit_nonlinear_gt",
    "fit_notch",
    "fit_qgaussian",
    "gt_model",
    "least_squares",
    "notch_model",
    "numeric_jacobian",
    "qgaussian_model",
]
