"""Fully Bayesian heteroskedastic Gaussian-process surrogates for replicated
stochastic simulations, with Woodbury unique-site likelihoods, Vecchia sparse
approximations and elliptical slice sampling."""

__version__ = "0.1.0"

from .data import (
    RawCampaign,
    ReplicatedDesign,
    Scaling,
    SplitSpec,
    build_replicated_design,
    fit_scaling,
    read_campaign_csv,
    split,
)
from .estimator import HetGPRegressor
from .exceptions import ConfigError, DataError, HetGPError, InputIOError, NumericalError
from .kernel import KernelParams, kernel_matrix, kernel_value
from .likelihood import LatentState, ScalePrior
from .mcmc import ChainSamples, HyperState, McmcConfig, PriorConfig, gibbs_fit
from .predict import MetricReport, PredictConfig, PredictionResult, metrics, predict_chain

__all__ = [
    "RawCampaign",
    "ReplicatedDesign",
    "Scaling",
    "SplitSpec",
    "build_replicated_design",
    "fit_scaling",
    "read_campaign_csv",
    "split",
    "HetGPRegressor",
    "HetGPError",
    "ConfigError",
    "DataError",
    "InputIOError",
    "NumericalError",
    "KernelParams",
    "kernel_matrix",
    "kernel_value",
    "LatentState",
    "ScalePrior",
    "ChainSamples",
    "HyperState",
    "McmcConfig",
    "PriorConfig",
    "gibbs_fit",
    "MetricReport",
    "PredictConfig",
    "PredictionResult",
    "metrics",
    "predict_chain",
]
