"""Transfer-learning latent factor model.

A k-factor model whose loadings are population specific (source and
target) and shrunk towards a shared global matrix, fitted by Gibbs
sampling with probit augmentation of binary columns.
"""
from .baselines import LassoModel, fit_lasso, fit_plain_lfm, predict_lasso
from .errors import ConvergenceError, DataError, NumericalError, SchemaError
from .experiment import ExperimentConfig, ExperimentReport, cross_validate_k, export_factor_scatter, run_experiment
from .gibbs import ChainConfig, PosteriorSamples, run_chain
from .metrics import auroc
from .model import (
    ColumnKind,
    Dataset,
    Hyperparameters,
    MarginalCovariance,
    ModelState,
    Population,
    assemble_marginal_covariance,
    validate_dataset,
)
from .predict import PredictiveResult, partition_covariance, predict, regression_coefficients, score_dataset
from .simgen import SimulationSpec, generate_dataset, generate_ground_truth

__version__ = "0.1.0"
