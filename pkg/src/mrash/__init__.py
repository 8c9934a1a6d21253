"""Variational empirical Bayes linear regression with adaptive shrinkage priors."""

from .data import RegressionData
from .errors import ConfigurationError, InvalidInputError, RangeError
from .mr_ash import FitOptions, VebFit, default_grid, fit, grid_for, predict
from .normal_means import (
    NormalMeansProblem,
    ScaleMixturePrior,
    fit_mixture_weights,
    invert_shrink,
    nm_marginal_loglik,
    penalty_at_shrunk,
    posterior,
    shrink,
)
from .plr import LassoPath, PlrSpec, fit_plr, lasso_path_cv, shrink_plr

__version__ = "0.1.0"

__all__ = [
    "RegressionData", "ConfigurationError", "InvalidInputError", "RangeError",
    "FitOptions", "VebFit", "default_grid", "fit", "grid_for", "predict",
    "NormalMeansProblem", "ScaleMixturePrior", "fit_mixture_weights", "invert_shrink",
    "nm_marginal_loglik", "penalty_at_shrunk", "posterior", "shrink",
    "LassoPath", "PlrSpec", "fit_plr", "lasso_path_cv", "shrink_plr",
]
