"""Kernel-based conditional independence testing with weight-matrix regressors."""

from .data import Dataset, load_csv, save_csv, standardize
from .engine import PRESETS, TestConfig, TestResult, gcm_test, gkcm_test, preset, run_test
from .exceptions import (
    ConfigError,
    DegenerateDataError,
    DimensionError,
    GKCMError,
    NumericalError,
    ParseError,
    SelectorError,
    TooFewSamplesError,
)
from .kernels import KernelSpec, gram, median_gaussian, median_heuristic
from .krr import krr_fit, krr_weights, loocv_lambda
from .nulldist import GchisqDist, pvalue
from .okforest import ForestSpec, best_split, fit_forest, forest_weights
from .regressors import FixedRegressor, ForestRegressor, KrrRegressor
from .simbench import Scenario, generate, run_campaign, wilson_ci

__version__ = "0.1.0"

__all__ = [
    "Dataset", "load_csv", "save_csv", "standardize",
    "PRESETS", "TestConfig", "TestResult", "gcm_test", "gkcm_test", "preset", "run_test",
    "ConfigError", "DegenerateDataError", "DimensionError", "GKCMError", "NumericalError",
    "ParseError", "SelectorError", "TooFewSamplesError",
    "KernelSpec", "gram", "median_gaussian", "median_heuristic",
    "krr_fit", "krr_weights", "loocv_lambda",
    "GchisqDist", "pvalue",
    "ForestSpec", "best_split", "fit_forest", "forest_weights",
    "FixedRegressor", "ForestRegressor", "KrrRegressor",
    "Scenario", "generate", "run_campaign", "wilson_ci",
]
