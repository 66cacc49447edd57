"""Benchmark dose (BMD) and lower-bound (BMDL) estimation for quantal data.

The dose-response model is a binomial GLM whose link is a centered,
standardized two-parameter Stukel family.  The logistic link sits at
``alpha = (0, 0)``.  A model-averaging baseline over eight standard quantal
models and a Monte-Carlo study harness are included.
"""

from .averaging import MaResult, StandardModelFit, aic_weights, estimate_bmd_ma, fit_standard_model
from .bmd import BmdResult, UnreachableTargetError, bmd_closed_form, compute_bmre, estimate_bmd
from .bmdl import (
    BmdlResult,
    MethodUnavailableError,
    bmdl_bootstrap,
    bmdl_lr,
    bmdl_ml,
    bmdl_score,
    compute_bmdl,
)
from .dataset import (
    CenteredDesign,
    DataValidationError,
    DoseResponseDataset,
    center,
    generate_binomial_responses,
    kendall_screen,
    read_csv,
)
from .likelihood import (
    ConstrainedFit,
    FitOptions,
    FittedModel,
    fisher_information,
    fit_constrained,
    fit_mle,
    log_likelihood,
    score,
)
from .link import Delta, generating_family, risk, risk_gradient
from .simulation import ScenarioSpec, StudyReport, builtin_scenarios, run_armb_study, run_coverage_study

__version__ = "0.1.0"

__all__ = [
    "BmdResult",
    "BmdlResult",
    "CenteredDesign",
    "ConstrainedFit",
    "DataValidationError",
    "Delta",
    "DoseResponseDataset",
    "FitOptions",
    "FittedModel",
    "MaResult",
    "MethodUnavailableError",
    "ScenarioSpec",
    "StandardModelFit",
    "StudyReport",
    "UnreachableTargetError",
    "aic_weights",
    "bmd_closed_form",
    "bmdl_bootstrap",
    "bmdl_lr",
    "bmdl_ml",
    "bmdl_score",
    "builtin_scenarios",
    "center",
    "compute_bmdl",
    "compute_bmre",
    "estimate_bmd",
    "estimate_bmd_ma",
    "fisher_information",
    "fit_constrained",
    "fit_mle",
    "fit_standard_model",
    "generate_binomial_responses",
    "generating_family",
    "kendall_screen",
    "log_likelihood",
    "read_csv",
    "risk",
    "risk_gradient",
    "run_armb_study",
    "run_coverage_study",
    "score",
]
