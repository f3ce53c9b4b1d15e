"""Regularized maximum likelihood estimation of random coefficient densities.

The joint density of ``(beta_0, beta_1)`` in ``Y = beta . X`` is estimated on
a rectangular grid by minimizing a penalized negative log-likelihood over
discrete probability densities, with a balancing-rule choice of the
penalty weight. A filtered back-projection kernel estimator and a Monte
Carlo harness are included for comparison.
"""

from .errors import (
    ConfigurationError,
    DataError,
    DegenerateObservationError,
    EmptyOperatorError,
    RCError,
)
from .estimators import RMLEOptions, fit_rmle, ise
from .geometry import Grid2D, Line2D, LineOperator, build_grid, build_operator, line_from_observation, trace_line
from .kernel import AngleDensity, FilterKernel, kernel_estimate, oracle_bandwidth
from .lepskii import AlphaPath, LepskiiResult, alpha_path, select
from .model import SCENARIOS, Dataset, MixtureTruth, Observation, Scenario, generate, load_csv, true_density
from .objective import DensityEstimate, ObjectiveValue, RegularizerSpec, neg_avg_loglik, objective, regularizer
from .simulation import SimulationReport, StudyConfig, run_study
from .solver import SolveOptions, SolveReport, kkt_residual, project_simplex, solve

__version__ = "0.1.0"
