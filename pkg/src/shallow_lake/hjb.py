"""Monotone finite-difference scheme for the stationary HJB equation.

The discrete equation at node ``x_i`` uses a backward difference in the
drift term, a forward difference inside the logarithm and a central second
difference, multiplied through by ``dx**2``:

    g_i = dx^2 w - (dx/rho) f(x) (w - d) + (dx^2/rho) (c x^2 + 1 + ln((w - c_R)/dx))
          - (sigma^2 q(x) / (2 rho)) (c_R + d - 2 w)

with ``w = V_i``, ``c_R = V_{i+1}``, ``d = V_{i-1}``, ``f(x) = x^2/(x^2+1) - b x``
and ``q(x) = x^2`` (or ``1`` for the ``flat`` variant).  The last node is pinned
to the large-x expansion; node 0 carries the same equation, where every
coefficient of the (nonexistent) left neighbour vanishes.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigurationError, ConvergenceError, MonotoneViolation
from .model import LakeParams, boundary_value, recycling, v0_upper_bound

log = logging.getLogger(__name__)

DIFFUSION_VARIANTS = ("x2", "flat")
METHODS = ("newton", "gauss-seidel")


@dataclass(frozen=True)
class Grid:
    l: float = 10.0
    n: int = 1000

    def __post_init__(self):
        if not (self.l > 0 and math.isfinite(self.l)):
            raise ConfigurationError(f"grid length must be positive, got {self.l!r}")
        if int(self.n) != self.n or self.n < 2:
            raise ConfigurationError(f"grid needs at least 2 intervals, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dx(self) -> float:
        return self.l / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dx

    @classmethod
    def with_spacing(cls, l: float, dx: float) -> "Grid":
        n = round(l / dx)
        if not math.isclose(n * dx, l, rel_tol=1e-9):
            raise ConfigurationError(f"spacing {dx} does not divide length {l}")
        return cls(l=l, n=n)


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Node values of the discrete welfare function on ``grid``.

    Immutable; ``values`` is a read-only array.  Strict decrease is checked on
    construction because the scheme and the feedback control need it.
    """

    grid: Grid
    values: np.ndarray
    params: LakeParams
    diffusion: str = "x2"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n + 1,):
            raise ConfigurationError(
                f"expected {self.grid.n + 1} node values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("value function contains non-finite entries")
        if not np.all(np.diff(values) < 0):
            i = int(np.argmax(np.diff(values) >= 0))
            raise MonotoneViolation(f"values are not strictly decreasing at node {i}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def gradient(self) -> np.ndarray:
        return gradient(self)

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values)


@dataclass
class SolveOptions:
    tol: float = 1e-10
    max_sweeps: int = 200
    init: Optional[np.ndarray] = None
    method: str = "newton"
    diffusion: str = "x2"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown solver method {self.method!r}")
        if self.diffusion not in DIFFUSION_VARIANTS:
            raise ConfigurationError(f"unknown diffusion variant {self.diffusion!r}")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.max_sweeps < 1:
            raise ConfigurationError("max_sweeps must be at least 1")


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    wall_time: float
    method: str = "newton"
    max_update: float = float("nan")
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MonotonicityReport:
    ok: bool
    worst_x: float
    worst_margin: float
    reason: str

    def __bool__(self):
        return self.ok


def _diffusion_weight(x, diffusion: str):
    x = np.asarray(x, dtype=float)
    if diffusion == "x2":
        return np.square(x)
    if diffusion == "flat":
        return np.ones_like(x)
    raise ConfigurationError(f"unknown diffusion variant {diffusion!r}")


def scheme_residual(x, w, cR, dL, dx, params: LakeParams, diffusion: str = "x2"):
    """Residual g(x, w, cR, dL) of the scheme at one node (vectorized)."""
    x, w, cR, dL = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, w, cR, dL)))
    if np.any(cR >= w):
        raise MonotoneViolation("scheme evaluated with V[i+1] >= V[i]")
    rho = params.rho
    f = recycling(x) - params.b * x
    q = _diffusion_weight(x, diffusion)
    out = (
        dx * dx * w
        - (dx / rho) * f * (w - dL)
        + (dx * dx / rho) * (params.c * x * x + 1.0 + np.log((w - cR) / dx))
        - (params.sigma**2 * q / (2 * rho)) * (cR + dL - 2 * w)
    )
    return out[()] if out.ndim == 0 else out


def monotonicity_check(params: LakeParams, dx: float, l: float | None = None,
                       diffusion: str = "x2") -> MonotonicityReport:
    """Check dx * (x^2/(x^2+1) - b x) <= sigma^2 q(x) / 2 on every grid node.

    The drift factor is positive only where x/(x^2+1) > b, which needs x < 1/b,
    so nodes beyond that never matter and ``l`` is optional.
    """
    if not dx > 0:
        raise ConfigurationError("dx must be positive")
    s2 = params.sigma**2
    if params.b >= 0.5:
        return MonotonicityReport(True, float("nan"), float("-inf"), "b >= 0.5")
    if dx <= s2 / 2:
        return MonotonicityReport(True, float("nan"), float("-inf"), "dx <= sigma^2/2")
    x_end = 1.0 / params.b if l is None else min(l, 1.0 / params.b)
    xs = np.arange(0, int(x_end / dx) + 2) * dx
    margin = dx * (recycling(xs) - params.b * xs) - 0.5 * s2 * _diffusion_weight(xs, diffusion)
    if diffusion == "flat":
        # node 0 carries no diffusion term in the solver; the drift factor vanishes there
        margin[0] = 0.0
    worst = int(np.argmax(margin))
    ok = bool(margin[worst] <= 0)
    reason = "condition holds on all nodes" if ok else f"violated at x = {xs[worst]:g}"
    return MonotonicityReport(ok, float(xs[worst]), float(margin[worst]), reason)


class _Scheme:
    """Vectorized residual and tridiagonal Jacobian over nodes 0..n-1."""

    def __init__(self, params: LakeParams, grid: Grid, diffusion: str):
        self.params, self.grid = params, grid
        x = grid.nodes[:-1]
        self.x = x
        self.dx = grid.dx
        rho = params.rho
        self.drift = (recycling(x) - params.b * x) * (self.dx / rho)
        q = _diffusion_weight(x, diffusion).copy()
        # node 0: the x^2 weight vanishes; for the flat variant the diffusion
        # term is dropped there instead of inventing a ghost node
        q[0] = 0.0
        self.diff = params.sigma**2 * q / (2 * rho)
        self.source = (self.dx**2 / rho) * (params.c * x * x + 1.0)
        self.right = float(boundary_value(grid.l, params))

    def full(self, v_interior):
        return np.append(v_interior, self.right)

    def residual(self, v):
        dx, rho = self.dx, self.params.rho
        w, cR = v[:-1], v[1:]
        dL = np.concatenate(([v[0]], v[:-2]))
        gap = w - cR
        if np.any(gap <= 0):
            raise MonotoneViolation("iterate lost strict decrease")
        return (
            dx * dx * w
            - self.drift * (w - dL)
            + self.source
            + (dx * dx / rho) * np.log(gap / dx)
            - self.diff * (cR + dL - 2 * w)
        )

    def measure(self, res) -> float:
        """Convergence measure: sup of the scaled residuals, and the node-0
        residual in the units of the boundary identity rho V_0 + 1 + ln(-DV_0)."""
        rho, dx = self.params.rho, self.dx
        return max(float(np.max(np.abs(res))), abs(float(res[0])) * rho / (dx * dx))

    def jacobian_bands(self, v):
        """Banded (1, 1) storage for scipy.linalg.solve_banded."""
        dx, rho = self.dx, self.params.rho
        m = self.grid.n
        gap = v[:-1] - v[1:]
        dlog = dx * dx / (rho * gap)
        diag = dx * dx - self.drift + dlog + 2 * self.diff
        upper = -dlog - self.diff          # d/dV_{i+1}
        lower = self.drift - self.diff      # d/dV_{i-1}
        ab = np.zeros((3, m))
        ab[0, 1:] = upper[:-1]
        ab[1] = diag
        ab[2, :-1] = lower[1:]
        # node 0 has no left neighbour: the drift factor and q vanish there
        return ab


def _initial_guess(params, grid, init):
    if init is None:
        v = np.asarray(boundary_value(grid.nodes, params), dtype=float)
    else:
        v = np.array(init, dtype=float)
        if v.shape != (grid.n + 1,):
            raise ConfigurationError("init must have one value per grid node")
        v[-1] = boundary_value(grid.l, params)
    if not np.all(np.diff(v) < 0):
        raise ConfigurationError("initial guess must be strictly decreasing")
    return v


def _newton(scheme: _Scheme, v, opts: SolveOptions, report: SolveReport):
    """Newton on the tridiagonal system, updating the node gaps V_i - V_{i+1}
    multiplicatively so every iterate stays strictly decreasing."""
    res = scheme.residual(v)
    norm = scheme.measure(res)
    report.history.append(norm)
    right = v[-1]
    for it in range(1, opts.max_sweeps + 1):
        if norm <= opts.tol:
            break
        step = np.append(solve_banded((1, 1), scheme.jacobian_bands(v), -res), 0.0)
        gap = -np.diff(v)
        rel = -np.diff(step) / gap
        alpha = 1.0
        while True:
            new_gap = gap * np.exp(np.clip(alpha * rel, -50.0, 50.0))
            trial = np.append(np.cumsum(new_gap[::-1])[::-1] + right, right)
            if np.all(np.diff(trial) < 0):
                trial_res = scheme.residual(trial)
                trial_norm = scheme.measure(trial_res)
                if trial_norm < norm:
                    break
            alpha *= 0.5
            if alpha < 1e-10:
                report.final_residual = norm
                raise ConvergenceError(
                    f"Newton line search stalled at residual {norm:.3e} after {it - 1} iterations",
                    report,
                )
        report.max_update = float(np.max(np.abs(trial - v)))
        v, res, norm = trial, trial_res, trial_norm
        report.iterations = it
        report.history.append(norm)
        log.debug("newton iter %d: residual %.3e step %.3e", it, norm, report.max_update)
    report.final_residual = norm
    return v


def _node_solve(scheme: _Scheme, i, v):
    """Root in w of the residual at node i, neighbours frozen."""
    x = scheme.x[i]
    cR = v[i + 1]
    dL = v[i - 1] if i > 0 else v[0]
    dx, rho = scheme.dx, scheme.params.rho

    def g(w):
        dl = dL if i > 0 else w
        return (
            dx * dx * w - scheme.drift[i] * (w - dl) + scheme.source[i]
            + (dx * dx / rho) * math.log((w - cR) / dx)
            - scheme.diff[i] * (cR + dl - 2 * w)
        )

    def dg(w):
        slope = dx * dx + dx * dx / (rho * (w - cR))
        if i > 0:
            slope += 2 * scheme.diff[i] - scheme.drift[i]
        return slope

    lo = float(np.nextafter(cR, math.inf))
    width = max(v[i] - cR, dx)
    hi = cR + width
    while g(hi) <= 0:
        width *= 2
        hi = cR + width
    lo_val = g(lo)
    if lo_val >= 0:
        return lo
    w = min(max(v[i], lo), hi)
    for _ in range(100):
        gw = g(w)
        if gw > 0:
            hi = w
        else:
            lo = w
        if abs(gw) <= 1e-16 * max(1.0, abs(w)) * dx * dx:
            break
        nxt = w - gw / dg(w)
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - w) <= 4e-16 * max(1.0, abs(w)):
            w = nxt
            break
        w = nxt
    return w


def _gauss_seidel(scheme: _Scheme, v, opts: SolveOptions, report: SolveReport):
    n = scheme.grid.n
    norm = scheme.measure(scheme.residual(v))
    report.history.append(norm)
    for sweep in range(1, opts.max_sweeps + 1):
        if norm <= opts.tol:
            break
        old = v.copy()
        for i in range(n - 1, -1, -1):
            v[i] = _node_solve(scheme, i, v)
        report.iterations = sweep
        report.max_update = float(np.max(np.abs(v - old)))
        norm = scheme.measure(scheme.residual(v))
        report.history.append(norm)
    report.final_residual = norm
    return v


def _check_boundary_datum(params: LakeParams, grid: Grid) -> None:
    # V is decreasing, so V(l) < V(0) <= v0_upper_bound; a pinned value above
    # the bound admits no decreasing discrete solution.
    if params.c != 1:
        return
    pinned = float(boundary_value(grid.l, params))
    bound = v0_upper_bound(params)
    if pinned >= bound:
        raise ConfigurationError(
            f"asymptotic boundary value {pinned:.4g} at l = {grid.l:g} is not below the "
            f"upper bound {bound:.4g} on V(0); the expansion is not yet accurate at this l "
            "for these parameters (increase l or rho)"
        )


def solve(params: LakeParams, grid: Grid, opts: SolveOptions | None = None):
    """Solve the discrete HJB system; returns ``(ValueFunction, SolveReport)``.

    Convergence is measured by the sup-norm of the ``dx**2``-scaled node
    residuals over nodes ``0..n-1``; node 0 must in addition satisfy the
    boundary identity ``rho V_0 + 1 + ln((V_0 - V_1)/dx) = 0`` to within ``tol``.
    """
    opts = opts or SolveOptions()
    params.require_feasible()
    mono = monotonicity_check(params, grid.dx, grid.l, opts.diffusion)
    if not mono:
        raise ConfigurationError(f"scheme is not monotone: {mono.reason}")
    _check_boundary_datum(params, grid)
    if grid.l < 5:
        warnings.warn(f"truncation point l = {grid.l} is small for the asymptotic boundary data")
    scheme = _Scheme(params, grid, opts.diffusion)
    v = _initial_guess(params, grid, opts.init)
    report = SolveReport(iterations=0, final_residual=float("inf"), converged=False,
                         wall_time=0.0, method=opts.method)
    start = time.perf_counter()
    if opts.method == "newton":
        v = _newton(scheme, v, opts, report)
    else:
        v = _gauss_seidel(scheme, v, opts, report)
    report.wall_time = time.perf_counter() - start
    report.converged = report.final_residual <= opts.tol
    if not report.converged:
        raise ConvergenceError(
            f"{opts.method} stopped after {report.iterations} iterations with residual "
            f"{report.final_residual:.3e} > tol {opts.tol:.1e}",
            report,
        )
    return ValueFunction(grid, v, params, opts.diffusion), report


def gradient(v: ValueFunction) -> np.ndarray:
    """Central differences inside, one-sided at both ends."""
    return np.gradient(np.asarray(v.values), v.grid.dx, edge_order=1)
