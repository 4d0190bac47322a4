import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nonconcave_dp import samples
from nonconcave_dp.utility import (GrowthCertificate, GrowthFalsified, UtilityError, UtilityModel,
                                   check_lifted, default_growth, empirical_elasticity,
                                   falsify_growth, kramkov_f, lift_growth, load_utility,
                                   refpoint_certificate)


def test_kf_integer_values_exact():
    for n in range(51):
        assert kramkov_f(float(n))[0] == (n - 1) / (2 * (n + 1))
    assert kramkov_f(0.0)[0] == -0.5


def test_kf_middle_slope_and_knots():
    for n in range(20):
        a = 1.0 / (4 * (n + 1) * (n + 2))
        x = np.linspace(n + 0.5 - a, n + 0.5 + a, 7)[1:-1]
        _, slope = kramkov_f(x)
        assert np.all(slope == 1.0)
        assert math.isnan(kramkov_f(n + 0.5 - a)[1])


def test_kf_elasticity_at_one_and_a_half():
    model = UtilityModel("kramkov_f")
    assert empirical_elasticity(model, x=1.5) == pytest.approx(18.0, abs=1e-3)


@given(st.floats(0, 200), st.floats(0, 200))
def test_kf_monotone_and_bounded(x, y):
    lo, hi = sorted((x, y))
    assert kramkov_f(lo)[0] <= kramkov_f(hi)[0] + 1e-15
    assert -0.5 <= kramkov_f(hi)[0] < 0.5


def test_kf_rejects_negative():
    with pytest.raises(ValueError):
        kramkov_f(-1.0)


def test_ramp_values():
    u = samples.ramp_utility()
    assert u.u(1.5) == 0.0 and u.u(1.75) == 0.5 and u.u(5.0) == 1.0
    assert list(u.breakpoints()) == [1.5, 2.0]


def test_reference_point_shift():
    u = UtilityModel("two_piece_power", {"alpha": 0.5, "beta": 0.5, "loss_aversion": 2.0},
                     {"a": 1.0, "b": 0.0})
    assert u.u(1.0, "a") == 0.0
    assert u.u(0.0, "a") == -2.0
    assert u.u(4.0, "b") == 2.0
    with pytest.raises(UtilityError):
        u.u(1.0, "zz")


def test_negative_wealth_rejected(sqrt_u):
    with pytest.raises(ValueError):
        sqrt_u.u(-0.1)


@pytest.mark.parametrize("family, params", [
    ("power", {"p": -1.0}),
    ("ramp", {"lo": 2.0, "hi": 1.0}),
    ("piecewise_polynomial", {"knots": [0.0, 1.0], "coeffs": [[0.0, 1.0], [2.0, 1.0]]}),
    ("piecewise_polynomial", {"knots": [0.0], "coeffs": [[0.0, -1.0]]}),
    ("nope", {}),
])
def test_invalid_utilities(family, params):
    with pytest.raises(UtilityError):
        UtilityModel(family, params)


def test_growth_sqrt_passes_and_lifts():
    u, g = samples.sqrt_utility(), samples.sqrt_growth()
    assert falsify_growth(u, g) is None
    lifted = lift_growth(u, g)
    assert lifted.lifted_at() == pytest.approx(1.0)


def test_growth_exponential_falsified():
    u = UtilityModel("exponential", {"rate": 1.0})
    cex = falsify_growth(u, GrowthCertificate(2.0, 1.0, 0.0))
    assert cex is not None and cex.lhs > cex.rhs
    with pytest.raises(GrowthFalsified):
        lift_growth(u, GrowthCertificate(2.0, 1.0, 0.0))


def test_kf_certificate():
    assert falsify_growth(samples.kf_utility(), samples.kf_growth()) is None
    lifted = lift_growth(samples.kf_utility(), samples.kf_growth())
    assert lifted.lifted_at() == pytest.approx(0.5)


def test_refpoint_certificate_formula():
    c = refpoint_certificate((0.5, 1.0, 0.0), (0.5, 1.0), 2.0)
    assert (c.gamma_bar, c.x_bar, c.c) == (0.5, 3.0, 1.0)
    u = UtilityModel("power", {"p": 0.5}, 2.0)
    assert falsify_growth(u, c) is None
    with pytest.raises(ValueError):
        refpoint_certificate((0.5, 1.0, 0.0), (0.5, 1.0), math.inf)


@given(st.integers(0, 10 ** 6))
def test_random_piecewise_utility_properties(seed):
    u = samples.random_piecewise_utility(seed)
    xs = np.linspace(0.0, 10.0, 2001)
    v = u.u(xs)
    assert np.all(np.diff(v) >= -1e-12)
    g = default_growth(u)
    assert g is not None
    lifted = lift_growth(u, g)
    assert check_lifted(u, lifted) is None


@given(st.floats(0.1, 1.0), st.floats(0.0, 3.0))
def test_default_growth_power_with_reference(p, B):
    u = UtilityModel("power", {"p": p}, B)
    assert falsify_growth(u, default_growth(u)) is None


def test_load_utility_json():
    text = json.dumps({"family": "power", "params": {"p": 0.5},
                       "reference": {"type": "per_node", "value": {"a": 1.0}},
                       "growth": {"gamma_bar": 0.5, "x_bar": 2.0, "c": {"a": 0.5}}})
    model, growth = load_utility(text)
    assert model.shift("a") == 1.0
    assert growth.c_at("a") == 0.5
    with pytest.raises(UtilityError):
        load_utility("[")


def test_to_dict_roundtrip():
    u = UtilityModel("ramp", {"lo": 1.0, "hi": 2.0}, 0.5)
    again, _ = load_utility(json.dumps(u.to_dict()))
    assert again == u


def test_elasticity_requires_nonzero_value(sqrt_u):
    with pytest.raises(ZeroDivisionError):
        empirical_elasticity(UtilityModel("kramkov_f"), x=1.0)
    assert empirical_elasticity(sqrt_u, x=4.0) == pytest.approx(0.5, rel=1e-6)
