"""Deep recurrent ReLU network regression for dependent time series data."""

from .construct import Lemma4Instance, embed, geometric_factor, lemma4_bound, measure_sup_error
from .datagen import Dataset, ModelSpec, bayes_risk, hk, regression_fn, simulate
from .estimator import RecurrentRegressor, WindowTransformer
from .exceptions import ConfigurationError, FitFailure, PreconditionError
from .network import (
    ActivationTrace,
    FeedforwardNet,
    NetConfig,
    RecurrentNetwork,
    count_distinct_weights,
    forward,
    forward_batch,
    relu,
    unfold,
)
from .theory import ScheduleConstants, log_covering_bound, rate, schedule, unfolded_stats
from .training import EstimatorConfig, FitReport, OptimizerConfig, empirical_risk, fit, gradient, predict

__all__ = [
    "ActivationTrace",
    "ConfigurationError",
    "Dataset",
    "EstimatorConfig",
    "FeedforwardNet",
    "FitFailure",
    "FitReport",
    "Lemma4Instance",
    "ModelSpec",
    "NetConfig",
    "OptimizerConfig",
    "PreconditionError",
    "RecurrentNetwork",
    "RecurrentRegressor",
    "ScheduleConstants",
    "WindowTransformer",
    "bayes_risk",
    "count_distinct_weights",
    "embed",
    "empirical_risk",
    "fit",
    "forward",
    "forward_batch",
    "geometric_factor",
    "gradient",
    "hk",
    "lemma4_bound",
    "log_covering_bound",
    "measure_sup_error",
    "predict",
    "rate",
    "regression_fn",
    "relu",
    "schedule",
    "simulate",
    "unfold",
    "unfolded_stats",
]
