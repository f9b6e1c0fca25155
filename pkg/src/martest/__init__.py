"""Semiparametric test of missing at random for GLM outcomes with an instrument."""

from .data import Dataset
from .errors import MarTestError
from .glm import FamilyKind, GlmFamily, GlmModel, fit_glm
from .hausman import TestResult, chisq_sf, discrepancy_covariance, run_test
from .io import InputSchema, read_dataset, write_dataset
from .ipw import EstimatorFit, solve_ipw
from .kernels import KernelConfig, ZMode
from .power import LocalPowerEstimate, ProbitPropensity, local_power
from .pseudolik import delta_hat, solve_pseudolik
from .simulation import FShape, Scenario, generate_dataset, rejection_rate, run_grid

__version__ = "0.1.0"

__all__ = [
    "Dataset", "EstimatorFit", "FShape", "FamilyKind", "GlmFamily", "GlmModel", "InputSchema",
    "KernelConfig", "LocalPowerEstimate", "MarTestError", "ProbitPropensity", "Scenario",
    "TestResult", "ZMode", "chisq_sf", "delta_hat", "discrepancy_covariance", "fit_glm",
    "generate_dataset", "local_power", "read_dataset", "rejection_rate", "run_grid", "run_test",
    "solve_ipw", "solve_pseudolik", "write_dataset",
]
