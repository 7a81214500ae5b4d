"""
Core Package
Contains the numerical backend: datasets, implied weights, estimators,
the KKT certification oracle, diagnostics and simulations
"""

from .dataset import (
    CONTROL,
    TREATED,
    CovariateProfile,
    Dataset,
    DatasetSchema,
    MatchedPairs,
    load_dataset,
    profile,
)
from .diagnostics import (
    balance_table,
    diagnose,
    effective_sample_size,
    extrapolation_report,
    plot_data,
    weight_diagnostics,
)
from .errors import (
    ConfigError,
    DataValidationError,
    ImpliedWeightsError,
    NumericalError,
    OutputError,
)
from .estimators import EstimateResult, hajek_estimate, sample_influence
from .qp_oracle import certify, solve_balance_qp
from .simulation import DGPConfig, SimulationReport, consistency_experiment, generate, weight_convergence_experiment
from .weights import Estimand, Method, WeightSet, compute_weights

__version__ = "1.0.0"

__all__ = [
    'CONTROL',
    'TREATED',
    'CovariateProfile',
    'Dataset',
    'DatasetSchema',
    'MatchedPairs',
    'load_dataset',
    'profile',
    'balance_table',
    'diagnose',
    'effective_sample_size',
    'extrapolation_report',
    'plot_data',
    'weight_diagnostics',
    'ConfigError',
    'DataValidationError',
    'ImpliedWeightsError',
    'NumericalError',
    'OutputError',
    'EstimateResult',
    'hajek_estimate',
    'sample_influence',
    'certify',
    'solve_balance_qp',
    'DGPConfig',
    'SimulationReport',
    'consistency_experiment',
    'generate',
    'weight_convergence_experiment',
    'Estimand',
    'Method',
    'WeightSet',
    'compute_weights',
]
