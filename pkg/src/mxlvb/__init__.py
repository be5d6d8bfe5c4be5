"""Mixed multinomial logit with inter- and intra-individual taste heterogeneity.

Estimation by mean-field variational Bayes (with nonconjugate message
passing for the occasion-level coefficients) and by Metropolis-within-Gibbs
MCMC, plus a simulation and predictive-accuracy harness.
"""
__version__ = "0.1.0"

from .evaluate import EvalConfig, PredictiveReport, evaluate, tvd, validation_scenarios
from .exceptions import MxlError, NumericalError, SchemaVersionError, ValidationError
from .mcmc import McmcConfig, McmcDraws, run_mcmc
from .model import ChoiceDataset, DgpConfig, Hyperparameters, ParameterState, simulate_dataset
from .vb import VariationalPosterior, VbConfig, VbResult, run_vb

__all__ = [
    "ChoiceDataset", "DgpConfig", "EvalConfig", "Hyperparameters", "McmcConfig", "McmcDraws",
    "MxlError", "NumericalError", "ParameterState", "PredictiveReport", "SchemaVersionError",
    "ValidationError", "VariationalPosterior", "VbConfig", "VbResult", "evaluate", "run_mcmc",
    "run_vb", "simulate_dataset", "tvd", "validation_scenarios",
]
