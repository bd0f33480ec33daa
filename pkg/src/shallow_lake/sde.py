"""Monte Carlo simulation of the controlled lake.

Every path ``i`` draws its Brownian increments from its own Philox stream,
keyed by the run seed with the path index in the high word of the counter,
so a path is reproducible regardless of how paths are batched.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
import numba
import numpy as np

from .errors import ConfigurationError, LakeError
from .hjb import ValueFunction, gradient
from .model import LakeParams, _expansion_coefficients

INTEGRATORS = ("kernel", "euler")
CHUNK = 256

_CONSTANT, _BENCHMARK, _FEEDBACK = 0, 1, 2


# ---------------------------------------------------------------------------
# policies


class Policy:
    """A stationary feedback rule x -> u(x) > 0."""

    kind: int

    def __call__(self, x):
        raise NotImplementedError

    def kernel_data(self):
        """(kind, [u0, dx, l, a, shift, rho], node gradients) for the compiled stepper."""
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Policy):
    u0: float

    kind = _CONSTANT

    def __post_init__(self):
        if not (self.u0 > 0 and math.isfinite(self.u0)):
            raise ConfigurationError(f"constant control must lie in (0, inf), got {self.u0!r}")

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.u0)

    def kernel_data(self):
        return _CONSTANT, np.array([self.u0, 0, 0, 0, 0, 0.0]), np.zeros(2)

    def __str__(self):
        return f"constant:{self.u0:g}"


@dataclass(frozen=True)
class Benchmark(Policy):
    """u(x) = (1 + x) / (1 + x^2)."""

    kind = _BENCHMARK

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (1 + x) / (1 + x * x)

    def kernel_data(self):
        return _BENCHMARK, np.zeros(6), np.zeros(2)

    def __str__(self):
        return "benchmark"


class Feedback(Policy):
    """u(x) = -1/V'(x) from a solved value function.

    V' is interpolated linearly between node gradients on [0, l] and taken from
    the large-x expansion beyond l.
    """

    kind = _FEEDBACK

    def __init__(self, value: ValueFunction):
        self.value = value
        grad = gradient(value)
        if np.any(grad >= 0):
            raise LakeError("value function gradient is not strictly negative")
        self.grad = grad
        self._a, _, self._shift = _expansion_coefficients(value.params)

    def gradient_at(self, x):
        x = np.asarray(x, dtype=float)
        grid = self.value.grid
        inside = np.interp(x, grid.nodes, self.grad)
        y = x + self._shift
        outside = -2 * self._a * y - 1.0 / (self.value.params.rho * y)
        return np.where(x <= grid.l, inside, outside)

    def __call__(self, x):
        return -1.0 / self.gradient_at(x)

    def kernel_data(self):
        g = self.value.grid
        data = np.array([0.0, g.dx, g.l, self._a, self._shift, self.value.params.rho])
        return _FEEDBACK, data, np.ascontiguousarray(self.grad)

    def __str__(self):
        return "feedback"


def feedback_control(value: ValueFunction, x):
    return Feedback(value)(x)


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class PathConfig:
    t_max: float = 300.0
    dt: float = 0.01
    integrator: str = "kernel"
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.dt <= self.t_max):
            raise ConfigurationError("need 0 < dt <= t_max")
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError(f"integrator must be one of {INTEGRATORS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must fit in 64 unsigned bits")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @classmethod
    def default_for(cls, params: LakeParams, **kw) -> "PathConfig":
        return cls(t_max=min(200.0 / params.rho, 2000.0), **kw)


@dataclass(frozen=True)
class Path:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    clamped: int


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    tail_bound: float
    clamped_steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# random streams


def path_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for path ``index`` of run ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=int(index) << 192))


def brownian_increments(seed: int, first: int, count: int, dts, out=None) -> np.ndarray:
    """Increments for paths first..first+count-1 on steps of length ``dts``."""
    dts = np.asarray(dts, dtype=float)
    scale = np.sqrt(dts)
    if out is None:
        out = np.empty((count, dts.size))
    else:
        out = out[:count]
    for j in range(count):
        path_stream(seed, first + j).standard_normal(out=out[j])
    out *= scale
    return out


# ---------------------------------------------------------------------------
# compiled stepper


@numba.njit(cache=True, inline="always")
def _control(x, kind, data, grad):
    if kind == 0:
        return data[0]
    if kind == 1:
        return (1.0 + x) / (1.0 + x * x)
    dx, l, a, shift = data[1], data[2], data[3], data[4]
    if x <= l:
        pos = x / dx
        i = int(pos)
        if i >= grad.size - 1:
            g = grad[grad.size - 1]
        else:
            w = pos - i
            g = (1.0 - w) * grad[i] + w * grad[i + 1]
    else:
        y = x + shift
        g = -2.0 * a * y - 1.0 / (data[5] * y)
    return -1.0 / g


@numba.njit(cache=True)
def _run_chunk(x0, dW, dt, b, sigma, rho, c, kind, data, grad, euler, store, xs, us):
    m, n = dW.shape
    payoff = np.empty(m)
    x_end = np.empty(m)
    u_end = np.empty(m)
    clamps = 0
    lin = -(b + 0.5 * sigma * sigma) * dt
    decay = math.exp(-rho * dt)
    for p in range(m):
        x = x0
        u = _control(x, kind, data, grad)
        if u <= 0.0 or not math.isfinite(u):
            raise ValueError("policy produced a non-positive control")
        disc = 1.0
        acc = 0.5 * (math.log(u) - c * x * x)
        if store:
            xs[p, 0] = x
            us[p, 0] = u
        for k in range(n):
            x2 = x * x
            r = x2 / (x2 + 1.0)
            if euler:
                x = x + (u - b * x + r) * dt + sigma * x * dW[p, k]
                if x < 0.0:
                    x = 0.0
                    clamps += 1
            else:
                zeta = math.exp(sigma * dW[p, k] + lin)
                x = zeta * (x + (u + r) * dt)
            u = _control(x, kind, data, grad)
            disc *= decay
            val = disc * (math.log(u) - c * x * x)
            if k == n - 1:
                acc += 0.5 * val
            else:
                acc += val
            if store:
                xs[p, k + 1] = x
                us[p, k + 1] = u
        payoff[p] = acc * dt
        x_end[p] = x
        u_end[p] = u
    return payoff, x_end, u_end, clamps


def _kernel_args(policy: Policy, params: LakeParams):
    kind, data, grad = policy.kernel_data()
    return kind, np.ascontiguousarray(data, dtype=float), np.ascontiguousarray(grad, dtype=float)


def _check_inputs(x0, policy, params):
    params.require_feasible()
    if not (x0 >= 0 and math.isfinite(x0)):
        raise ConfigurationError(f"initial state must be a finite x0 >= 0, got {x0!r}")
    if not isinstance(policy, Policy):
        raise ConfigurationError("policy must be Constant, Benchmark or Feedback")


def simulate_paths(x0: float, policy: Policy, cfg: PathConfig, params: LakeParams,
                   n_paths: int = 1, first: int = 0):
    """Full trajectories for paths first..first+n_paths-1.

    Returns ``(t, x, u, clamped)`` with ``x`` and ``u`` of shape
    ``(n_paths, n_steps + 1)``.
    """
    _check_inputs(x0, policy, params)
    n = cfg.n_steps
    dW = brownian_increments(cfg.seed, first, n_paths, np.full(n, cfg.dt))
    xs = np.empty((n_paths, n + 1))
    us = np.empty((n_paths, n + 1))
    kind, data, grad = _kernel_args(policy, params)
    _, _, _, clamps = _run_chunk(float(x0), dW, cfg.dt, params.b, params.sigma, params.rho,
                                 params.c, kind, data, grad, cfg.integrator == "euler",
                                 True, xs, us)
    return cfg.times, xs, us, int(clamps)


def simulate_path(x0: float, policy: Policy, cfg: PathConfig, params: LakeParams,
                  index: int = 0) -> Path:
    t, xs, us, clamps = simulate_paths(x0, policy, cfg, params, 1, index)
    return Path(t, xs[0], us[0], clamps)


def mc_payoff(x0: float, policy: Policy, cfg: PathConfig, n_paths: int,
              params: LakeParams) -> McEstimate:
    """Estimate J(x0; policy) by truncating the horizon at ``cfg.t_max``.

    The integral is trapezoidal in time.  ``tail_bound`` bounds the neglected
    part beyond ``t_max`` by ``2 exp(-rho t_max) E[|ln u| + c x^2] / rho`` taken
    at the final time, the factor 2 being a safety margin.
    """
    _check_inputs(x0, policy, params)
    if n_paths < 2:
        raise ConfigurationError("need at least two paths for a standard error")
    n = cfg.n_steps
    dts = np.full(n, cfg.dt)
    kind, data, grad = _kernel_args(policy, params)
    payoff = np.empty(n_paths)
    envelope = np.empty(n_paths)
    clamps = 0
    dummy = np.empty((1, 1))
    buf = np.empty((min(CHUNK, n_paths), n))
    for first in range(0, n_paths, CHUNK):
        count = min(CHUNK, n_paths - first)
        dW = brownian_increments(cfg.seed, first, count, dts, buf)
        pay, x_end, u_end, cl = _run_chunk(float(x0), dW, cfg.dt, params.b, params.sigma,
                                           params.rho, params.c, kind, data, grad,
                                           cfg.integrator == "euler", False, dummy, dummy)
        payoff[first:first + count] = pay
        envelope[first:first + count] = np.abs(np.log(u_end)) + params.c * x_end**2
        clamps += cl
    std = float(np.std(payoff, ddof=1))
    tail = 2.0 * math.exp(-params.rho * cfg.t_max) * float(np.mean(envelope)) / params.rho
    return McEstimate(
        mean=float(np.mean(payoff)),
        std_error=std / math.sqrt(n_paths),
        n_paths=int(n_paths),
        tail_bound=tail,
        clamped_steps=int(clamps),
    )


# ---------------------------------------------------------------------------
# the linear kernel Z_t = exp(sigma W_t - (b + sigma^2/2) t)


def simulate_kernel(t_grid, seed: int, params: LakeParams, n_paths: int = 1,
                    first: int = 0) -> np.ndarray:
    """Exact samples of Z on ``t_grid`` (must start at 0), shape (n_paths, len)."""
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ConfigurationError("t_grid must be increasing and start at 0")
    dts = np.diff(t)
    dW = brownian_increments(seed, first, n_paths, dts)
    incr = params.sigma * dW - (params.b + 0.5 * params.sigma**2) * dts
    log_z = np.concatenate((np.zeros((n_paths, 1)), np.cumsum(incr, axis=1)), axis=1)
    return np.exp(log_z)


@numba.njit(cache=True)
def _convolution_integrals(dW, dt, b, sigma, rho):
    """Per-path discounted integrals of M, Z*M and M^2 with M_t = int_0^t Z_t/Z_s ds."""
    m, n = dW.shape
    out = np.empty((m, 3))
    lin = -(b + 0.5 * sigma * sigma) * dt
    decay = math.exp(-rho * dt)
    for p in range(m):
        z = 1.0
        mt = 0.0
        disc = 1.0
        s1 = 0.0
        s2 = 0.0
        s3 = 0.0
        for k in range(n):
            zeta = math.exp(sigma * dW[p, k] + lin)
            # trapezoid for int_{t_k}^{t_{k+1}} Z_{t_{k+1}}/Z_s ds
            mt = zeta * mt + 0.5 * dt * (zeta + 1.0)
            z *= zeta
            disc *= decay
            w = 0.5 if k == n - 1 else 1.0
            s1 += w * disc * mt
            s2 += w * disc * z * mt
            s3 += w * disc * mt * mt
        out[p, 0] = s1 * dt
        out[p, 1] = s2 * dt
        out[p, 2] = s3 * dt
    return out


def convolution_integrals(cfg: PathConfig, n_paths: int, params: LakeParams) -> np.ndarray:
    """Per-path (int e^{-rho t} M_t, int e^{-rho t} Z_t M_t, int e^{-rho t} M_t^2)
    with M_t = int_0^t Z_t/Z_s ds, truncated at ``cfg.t_max``."""
    params.require_feasible()
    n = cfg.n_steps
    dts = np.full(n, cfg.dt)
    out = np.empty((n_paths, 3))
    buf = np.empty((min(CHUNK, n_paths), n))
    for first in range(0, n_paths, CHUNK):
        count = min(CHUNK, n_paths - first)
        dW = brownian_increments(cfg.seed, first, count, dts, buf)
        out[first:first + count] = _convolution_integrals(dW, cfg.dt, params.b,
                                                          params.sigma, params.rho)
    return out


def coupling_violation(x0: float, y0: float, u0: float, cfg: PathConfig, params: LakeParams,
                       n_paths: int) -> float:
    """Largest shortfall of y(t) - x(t) below (y0 - x0) Z_t over all steps.

    Both paths share the control ``u0`` and the Brownian increments; ``Z`` is
    sampled exactly from the same increments.
    """
    if not x0 < y0:
        raise ConfigurationError("need x0 < y0")
    t, xs, _, _ = simulate_paths(x0, Constant(u0), cfg, params, n_paths)
    _, ys, _, _ = simulate_paths(y0, Constant(u0), cfg, params, n_paths)
    z = simulate_kernel(t, cfg.seed, params, n_paths)
    return float(max(0.0, np.max((y0 - x0) * z - (ys - xs))))
