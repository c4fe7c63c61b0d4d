"""Bayesian numerical integration with BART priors."""

from .design import DesignState, acquisition_bart, acquisition_gp, run_sequential
from .estimators import BARTRegressor, GPQuadrature
from .exceptions import ConfigError, NumericalError, StructuralError
from .gpbq import BqPosterior, GpConfig, bq_posterior, fit_lengthscale, gp_predictive, matern32
from .integrands import GenzFunction, Portfolio, ingest_pool, step_function
from .measures import EmpiricalMeasure, ProductMeasure, SampleSet
from .prior import BartPriorConfig
from .quadrature import IntegralPosterior, mape, mc_integrate, posterior_summary
from .sampler import ChainConfig, PosteriorDraws, run_chain
from .trees import DecisionTree, SumOfTrees

__all__ = [
    "BARTRegressor", "BartPriorConfig", "BqPosterior", "ChainConfig", "ConfigError",
    "DecisionTree", "DesignState", "EmpiricalMeasure", "GPQuadrature", "GenzFunction",
    "GpConfig", "IntegralPosterior", "NumericalError", "Portfolio", "PosteriorDraws",
    "ProductMeasure", "SampleSet", "StructuralError", "SumOfTrees", "acquisition_bart",
    "acquisition_gp", "bq_posterior", "fit_lengthscale", "gp_predictive", "ingest_pool",
    "mape", "matern32", "mc_integrate", "posterior_summary", "run_chain", "run_sequential",
    "step_function",
]
