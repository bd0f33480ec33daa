"""Shallow lake model: parameters, Hamiltonian, optimal control and the
large-x expansion of the value function used as boundary data.

The dynamics are

    dx = (u - b x + x^2 / (x^2 + 1)) dt + sigma x dW,

the running payoff is ``ln u - c x^2`` discounted at rate ``rho``.
"""
from __future__ import annotations

import configparser
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    InfeasibleParameters,
    InfiniteHamiltonian,
    UnsupportedConfiguration,
)

__all__ = [
    "LakeParams",
    "AsymptoticExpansion",
    "recycling",
    "drift",
    "running_payoff",
    "hamiltonian",
    "optimal_control",
    "asymptotic_value",
    "asymptotic_gradient",
    "v0_upper_bound",
]

PARAM_KEYS = ("rho", "b", "c", "sigma")


@dataclass(frozen=True)
class LakeParams:
    rho: float = 0.03
    b: float = 0.65
    c: float = 1.0
    sigma: float = 0.1

    def __post_init__(self):
        for name in PARAM_KEYS:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigurationError(f"{name} must be a finite number, got {value!r}")
        if self.rho <= 0 or self.b <= 0 or self.c <= 0:
            raise ConfigurationError("rho, b and c must be strictly positive")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be nonnegative")

    # -- feasibility -----------------------------------------------------
    def feasible(self) -> bool:
        return self.sigma**2 < self.rho + 2 * self.b

    def require_feasible(self) -> None:
        if not self.feasible():
            raise InfeasibleParameters(
                f"sigma^2 = {self.sigma**2:g} >= rho + 2b = {self.rho + 2 * self.b:g}: "
                "the welfare function is identically -inf"
            )

    def require_unit_weight(self, what: str) -> None:
        if self.c != 1:
            raise UnsupportedConfiguration(f"{what} is only established for c = 1 (got c = {self.c:g})")

    # -- derived constants (recomputed on every access) --------------------
    @property
    def shift(self) -> float:
        return 1.0 / (self.b + self.rho)

    @property
    def A(self) -> float:
        self.require_feasible()
        return 1.0 / (self.rho + 2 * self.b - self.sigma**2)

    @property
    def K(self) -> float:
        rho, b, s2 = self.rho, self.b, self.sigma**2
        return ((2 * b + s2) / (2 * rho) - self.A * (rho + 2 * b) / (b + rho) ** 2 - 1) / rho

    def expansion(self) -> "AsymptoticExpansion":
        self.require_unit_weight("the asymptotic expansion")
        return AsymptoticExpansion(A=self.A, K=self.K, shift=self.shift)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "LakeParams":
        return replace(self, **changes)

    @classmethod
    def from_mapping(cls, mapping) -> "LakeParams":
        unknown = set(mapping) - set(PARAM_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown parameter keys: {sorted(unknown)}")
        try:
            values = {k: float(v) for k, v in mapping.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"non-numeric parameter value: {exc}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "LakeParams":
        """Read parameters from a JSON object or from ``key = value`` lines."""
        text = Path(path).read_text()
        if text.lstrip().startswith("{"):
            data = json.loads(text)
            return cls.from_mapping({k: v for k, v in data.items() if k in PARAM_KEYS})
        parser = configparser.ConfigParser()
        parser.read_string("[lake]\n" + text)
        return cls.from_mapping({k: v for k, v in parser["lake"].items() if k in PARAM_KEYS})


@dataclass(frozen=True)
class AsymptoticExpansion:
    """Coefficients of V(x) ~ -A y^2 - ln(2 A y)/rho + K with y = x + shift."""

    A: float
    K: float
    shift: float


def recycling(x):
    x2 = np.square(x)
    return x2 / (x2 + 1.0)


def drift(x, u, params: LakeParams):
    return u - params.b * x + recycling(x)


def running_payoff(x, u, params: LakeParams):
    if np.any(np.asarray(u) <= 0):
        raise ConfigurationError("control must be strictly positive")
    return np.log(u) - params.c * np.square(x)


def hamiltonian(x, p, P, params: LakeParams):
    """sup over u > 0 of the generator applied to (p, P) plus the payoff."""
    if np.any(np.asarray(p) >= 0):
        raise InfiniteHamiltonian("H(x, p, P) = +inf for p >= 0")
    x2 = np.square(x)
    return (
        (recycling(x) - params.b * x) * p
        - (np.log(-p) + params.c * x2 + 1.0)
        + 0.5 * params.sigma**2 * x2 * P
    )


def optimal_control(p):
    if np.any(np.asarray(p) >= 0):
        raise ConfigurationError("optimal control requires a strictly negative gradient")
    return -1.0 / p


def _expansion_coefficients(params: LakeParams):
    # Leading-order matching of the expansion in the HJB equation gives the
    # quadratic coefficient c*A and the constant below; at c = 1 they reduce to
    # A and K.  Only used for boundary data when c != 1.
    params.require_feasible()
    rho, b, s2, s = params.rho, params.b, params.sigma**2, params.shift
    a = params.c / (rho + 2 * b - s2)
    k = a * s * s - 2 * a * s / rho + b / rho**2 - 1 / rho + s2 / (2 * rho**2)
    return a, k, s


def boundary_value(x, params: LakeParams):
    """Right-boundary datum for the solver; the published expansion when c = 1."""
    if params.c == 1:
        return asymptotic_value(x, params)
    a, k, s = _expansion_coefficients(params)
    y = np.asarray(x, dtype=float) + s
    return -a * y * y - np.log(2 * a * y) / params.rho + k


def boundary_gradient(x, params: LakeParams):
    if params.c == 1:
        return asymptotic_gradient(x, params)
    a, _, s = _expansion_coefficients(params)
    y = np.asarray(x, dtype=float) + s
    return -2 * a * y - 1.0 / (params.rho * y)


def asymptotic_value(x, params: LakeParams):
    exp = params.expansion()
    y = np.asarray(x, dtype=float) + exp.shift
    return -exp.A * y * y - np.log(2 * exp.A * y) / params.rho + exp.K


def asymptotic_gradient(x, params: LakeParams):
    exp = params.expansion()
    y = np.asarray(x, dtype=float) + exp.shift
    return -2 * exp.A * y - 1.0 / (params.rho * y)


def v0_upper_bound(params: LakeParams) -> float:
    """Closed-form upper bound on the value of a clean lake, V(0); c = 1 only."""
    params.require_unit_weight("the V(0) upper bound")
    params.require_feasible()
    return math.log((params.b + params.rho) / math.sqrt(2 * math.e)) / params.rho
