import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from shallow_lake.errors import (
    ConfigurationError,
    InfeasibleParameters,
    InfiniteHamiltonian,
    UnsupportedConfiguration,
)
from shallow_lake.model import (
    LakeParams,
    asymptotic_gradient,
    asymptotic_value,
    boundary_value,
    drift,
    hamiltonian,
    optimal_control,
    running_payoff,
    v0_upper_bound,
)

DEFAULT = LakeParams()

rhos = st.floats(0.01, 2.0)
bs = st.floats(0.05, 2.0)
xs = st.floats(0.0, 50.0)


@st.composite
def feasible_params(draw):
    rho, b = draw(rhos), draw(bs)
    sigma = draw(st.floats(0.0, 0.95)) * math.sqrt(rho + 2 * b)
    return LakeParams(rho=rho, b=b, c=draw(st.floats(0.1, 3.0)), sigma=sigma)


# -- parameters ----------------------------------------------------------------


def test_defaults_and_constants():
    assert DEFAULT.to_dict() == {"rho": 0.03, "b": 0.65, "c": 1.0, "sigma": 0.1}
    assert DEFAULT.A == pytest.approx(1 / 1.32, rel=1e-15)
    assert DEFAULT.shift == pytest.approx(1 / 0.68, rel=1e-15)
    # frozen from the closed form, cross-checked symbolically
    assert DEFAULT.K == pytest.approx(621.8106672258922, rel=1e-13)


@pytest.mark.parametrize("kw", [{"rho": 0}, {"b": -1}, {"c": 0}, {"sigma": -0.1}, {"rho": float("nan")}])
def test_invalid_parameters_rejected(kw):
    with pytest.raises(ConfigurationError):
        LakeParams(**kw)


@pytest.mark.parametrize("rho,b,sigma,ok", [(0.03, 0.65, 0.1, True), (0.03, 0.1, 0.5, False), (0.5, 0.2, 0.0, True)])
def test_feasibility_examples(rho, b, sigma, ok):
    p = LakeParams(rho=rho, b=b, sigma=sigma)
    assert p.feasible() is ok
    if not ok:
        with pytest.raises(InfeasibleParameters):
            p.A


def test_parameters_from_key_value_file(tmp_path):
    f = tmp_path / "lake.cfg"
    f.write_text("rho = 0.5\nsigma = 0.2\n")
    assert LakeParams.from_file(f) == LakeParams(rho=0.5, sigma=0.2)
    g = tmp_path / "lake.json"
    g.write_text('{"b": 0.8, "c": 2}')
    assert LakeParams.from_file(g) == LakeParams(b=0.8, c=2.0)
    with pytest.raises(ConfigurationError):
        LakeParams.from_mapping({"beta": 1.0})


# -- dynamics and payoff ---------------------------------------------------------


@pytest.mark.parametrize("x,u,b,expected", [(0, 1, 0.65, 1.0), (1, 0, 0.5, 0.0), (2, 0.1, 0.65, -0.4)])
def test_drift_examples(x, u, b, expected):
    assert drift(x, u, DEFAULT.with_(b=b)) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("x,u,c,expected", [(0, 1, 1, 0.0), (2, 1, 1, -4.0), (1, math.e, 0.5, 0.5)])
def test_running_payoff_examples(x, u, c, expected):
    assert running_payoff(x, u, DEFAULT.with_(c=c)) == pytest.approx(expected, abs=1e-15)


def test_running_payoff_rejects_nonpositive_control():
    with pytest.raises(ConfigurationError):
        running_payoff(1.0, 0.0, DEFAULT)


@pytest.mark.parametrize("x,p,P,expected", [(0, -1, 0, -1.0), (0, -math.e, 0, -2.0), (1, -1, 0, -1.85)])
def test_hamiltonian_examples(x, p, P, expected):
    params = LakeParams(rho=0.03, b=0.65, c=1, sigma=0)
    assert hamiltonian(x, p, P, params) == pytest.approx(expected, abs=1e-14)


def test_hamiltonian_infinite_for_nonnegative_gradient():
    with pytest.raises(InfiniteHamiltonian):
        hamiltonian(1.0, 0.0, 0.0, DEFAULT)


@settings(max_examples=60, deadline=None)
@given(feasible_params(), xs, st.floats(-20.0, -1e-3), st.floats(-5.0, 5.0))
def test_hamiltonian_matches_brute_force_supremum(params, x, p, P):
    def neg(logu):
        u = math.exp(logu)
        return -(drift(x, u, params) * p + 0.5 * params.sigma**2 * x * x * P + running_payoff(x, u, params))

    best = minimize_scalar(neg, bounds=(-15, 15), method="bounded", options={"xatol": 1e-12})
    scale = 1 + abs(best.fun)
    assert hamiltonian(x, p, P, params) == pytest.approx(-best.fun, abs=1e-8 * scale)


@pytest.mark.parametrize("p,u", [(-1, 1), (-2, 0.5), (-0.1, 10)])
def test_optimal_control_examples(p, u):
    assert optimal_control(p) == pytest.approx(u, rel=1e-15)


# -- large-x expansion -----------------------------------------------------------


def test_asymptotic_value_at_zero():
    A, s = 1 / 1.32, 1 / 0.68
    expected = -A * s * s - math.log(2 * A * s) / 0.03 + DEFAULT.K
    assert asymptotic_value(0.0, DEFAULT) == pytest.approx(expected, rel=1e-14)
    assert asymptotic_value(0.0, DEFAULT) == pytest.approx(593.4663805229936, rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(feasible_params(), st.lists(xs, min_size=2, max_size=6))
def test_transformed_expansion_is_constant(params, points):
    params = params.with_(c=1.0)
    y = np.array(points) + params.shift
    q = asymptotic_value(np.array(points), params) + params.A * y * y + np.log(y) / params.rho
    const = params.K - math.log(2 * params.A) / params.rho
    assert np.allclose(q, const, rtol=1e-10, atol=1e-9 * (1 + abs(const) + float(np.max(params.A * y * y))))


def test_expansion_diverges_at_pole():
    base = LakeParams(rho=0.03, b=0.65, sigma=0.0)
    vals = [asymptotic_value(1.0, base.with_(sigma=math.sqrt(1.33 * (1 - e)))) for e in (1e-2, 1e-4, 1e-6)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < -1e5


@settings(max_examples=50, deadline=None)
@given(feasible_params(), st.floats(0.0, 40.0))
def test_asymptotic_gradient_negative_and_matches_difference(params, x):
    params = params.with_(c=1.0)
    g = asymptotic_gradient(x, params)
    assert g < 0
    h = 1e-4
    fd = (asymptotic_value(x + h, params) - asymptotic_value(x - h, params)) / (2 * h)
    assert fd == pytest.approx(g, rel=1e-6, abs=1e-6)


def test_asymptotic_gradient_leading_term():
    x = 1e8
    assert asymptotic_gradient(x, DEFAULT) / (-2 * DEFAULT.A * x) == pytest.approx(1.0, rel=1e-7)


def test_expansion_requires_unit_weight():
    with pytest.raises(UnsupportedConfiguration):
        asymptotic_value(1.0, DEFAULT.with_(c=2.0))
    # the solver still gets boundary data for other weights
    assert np.isfinite(boundary_value(10.0, DEFAULT.with_(c=2.0)))


@pytest.mark.parametrize(
    "params,expected",
    [
        (DEFAULT, math.log(0.68 / math.sqrt(2 * math.e)) / 0.03),
        (LakeParams(rho=0.03, b=math.sqrt(2 * math.e) - 0.03), 0.0),
        (LakeParams(rho=1.0, b=math.sqrt(2 * math.e) - 1), 0.0),
    ],
)
def test_v0_upper_bound_examples(params, expected):
    assert v0_upper_bound(params) == pytest.approx(expected, abs=1e-12)


def test_v0_upper_bound_value():
    assert v0_upper_bound(DEFAULT) == pytest.approx(-41.07453570306524, rel=1e-13)
    with pytest.raises(UnsupportedConfiguration):
        v0_upper_bound(DEFAULT.with_(c=2.0))
