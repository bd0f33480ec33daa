"""Welfare function of the stochastic shallow lake problem: monotone HJB
solver, Monte Carlo simulation of the controlled lake, and oracle checks."""

from .errors import (
    ConfigurationError,
    ConvergenceError,
    InfeasibleParameters,
    InfiniteHamiltonian,
    LakeError,
    MonotoneViolation,
    UnsupportedConfiguration,
)
from .hjb import Grid, SolveOptions, SolveReport, ValueFunction, monotonicity_check, scheme_residual, solve
from .model import LakeParams, asymptotic_gradient, asymptotic_value, hamiltonian, v0_upper_bound
from .sde import Benchmark, Constant, Feedback, PathConfig, mc_payoff, simulate_path
from .verify import CheckResult, run_suite

__version__ = "0.1.0"
