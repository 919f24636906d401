"""Learning the relevance weights of overlapping variable groups.

Multi-task sparse linear regression with super-Gaussian priors on group
coefficient blocks; the inverse scale ``f(A)`` of every group is learned
by variational inference shared across tasks.
"""
from .active_set import ActiveSetConfig, active_set_fit
from .exceptions import ConfigError, DomainError, NumericalError, StructuralError
from .inference import FitConfig, FitResult, UpdatePath, fit
from .model import F_CAP, GroupFamily, HyperParams, TaskData, objective
from .priors import PriorConfig, PriorFamily

__version__ = "0.1.0"

__all__ = [
    "ActiveSetConfig", "active_set_fit", "ConfigError", "DomainError", "NumericalError",
    "StructuralError", "FitConfig", "FitResult", "UpdatePath", "fit", "F_CAP", "GroupFamily",
    "HyperParams", "TaskData", "objective", "PriorConfig", "PriorFamily",
]
