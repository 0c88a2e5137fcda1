"""Fundamental solutions of kinetic Fokker-Planck and stochastic Langevin equations."""

from . import _backend
from .brownian import BrownianPath
from .coefficients import (
    GridSpec,
    KolmogorovCoefficients,
    SpdeCoefficients,
    builtin_family,
    hormander_check,
    validate_assumptions,
)
from .errors import (
    ConfigError,
    ControlError,
    DomainError,
    HorizonError,
    IntegrationError,
    InversionError,
    LangevinKernelError,
    QuadratureBudgetError,
)
from .gaussian_kernels import LangevinParams, SymMat2
from .geometry import PhasePoint, SpaceTimePoint
from .parametrix_solver import KernelEvaluation, ParametrixConfig

__version__ = "0.1.0"
BACKEND = _backend.name()

__all__ = [
    "BACKEND",
    "BrownianPath",
    "ConfigError",
    "ControlError",
    "DomainError",
    "GridSpec",
    "HorizonError",
    "IntegrationError",
    "InversionError",
    "KernelEvaluation",
    "KolmogorovCoefficients",
    "LangevinKernelError",
    "LangevinParams",
    "ParametrixConfig",
    "PhasePoint",
    "QuadratureBudgetError",
    "SpaceTimePoint",
    "SpdeCoefficients",
    "SymMat2",
    "builtin_family",
    "hormander_check",
    "validate_assumptions",
]
