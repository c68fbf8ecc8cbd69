"""Worst-case expected losses over Wasserstein balls and their regularized equivalents."""

__version__ = "0.1.0"

from wdro.core import (EmpiricalDistribution, LossSpec, NormSpec, DataSpace,
                       SmoothnessCertificate, empirical_norm)
from wdro.errors import (WdroError, ConfigError, DomainError, UnboundedError, KinkError,
                         NoRootError)
from wdro.oracle import wasserstein_p, oracle_worst_case, min_cost_transport
from wdro.duality import worst_case_dual, worst_case_inf, empirical_risk
from wdro.equivalence import theorem1_value, corollary1_value, exactness_report, fit_regularized
from wdro.regularization import grad_penalty, upper_bound, lower_bound, young_check
from wdro.choice import ChoiceGenerator, choice_probabilities, solve_alpha0

__all__ = [
    "EmpiricalDistribution", "LossSpec", "NormSpec", "DataSpace", "SmoothnessCertificate",
    "empirical_norm", "WdroError", "ConfigError", "DomainError", "UnboundedError",
    "KinkError", "NoRootError", "wasserstein_p", "oracle_worst_case", "min_cost_transport",
    "worst_case_dual", "worst_case_inf", "empirical_risk", "theorem1_value",
    "corollary1_value", "exactness_report", "fit_regularized", "grad_penalty",
    "upper_bound", "lower_bound", "young_check", "ChoiceGenerator",
    "choice_probabilities", "solve_alpha0",
]
