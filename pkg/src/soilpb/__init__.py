"""Soil-lead source apportionment with a transform-both-sides log-sum model."""

from .apportion import ApportionmentCurve, crossing_years, efc, efc_curve
from .estimator import FitOptions, FitResult, fit, initial_theta
from .inference import asymptotic_se, confidence_curve_trace, profile_interval, residual_bootstrap
from .model import Dataset, DesignPoint, Theta, fitted_mean, linear_predictor, log_likelihood, log_mean
from .series import CumulativeExposure, SeriesPolicy, YearlySeries, apply_policy, cumulate, impute_proportional

__version__ = "0.1.0"
