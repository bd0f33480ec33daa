"""Exception types shared by the solver, simulator and CLI."""


class LakeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LakeError, ValueError):
    """Invalid user configuration (parameters, grid, options)."""


class InfeasibleParameters(ConfigurationError):
    """sigma**2 >= rho + 2b: the welfare function is identically -inf."""


class UnsupportedConfiguration(ConfigurationError):
    """A formula was requested outside the case it is known to hold for (c != 1)."""


class InfiniteHamiltonian(LakeError, ArithmeticError):
    """The Hamiltonian was evaluated at p >= 0, where the supremum is +inf."""


class MonotoneViolation(LakeError, ArithmeticError):
    """A scheme node was evaluated with V[i+1] >= V[i]; the log term is undefined."""


class ConvergenceError(LakeError, RuntimeError):
    """The nonlinear solver did not reach its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
