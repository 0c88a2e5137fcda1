"""Exception hierarchy shared by all modules."""


class LangevinKernelError(Exception):
    """Base class for library errors."""


class DomainError(LangevinKernelError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class HorizonError(LangevinKernelError, ValueError):
    """Requested time lies outside a path or curve horizon."""


class IntegrationError(LangevinKernelError, ArithmeticError):
    """ODE integration could not proceed (step underflow, non-finite state)."""


class InversionError(LangevinKernelError, ArithmeticError):
    """Monotone inversion of the stochastic flow failed."""


class QuadratureBudgetError(LangevinKernelError, RuntimeError):
    """Nested quadrature would exceed the configured evaluation budget."""


class ControlError(LangevinKernelError, ArithmeticError):
    """Endpoint correction of a control problem did not converge."""


class ConfigError(LangevinKernelError, ValueError):
    """Invalid scenario or family configuration.

    ``key`` names the offending configuration entry when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
