import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import COULOMB_C1, COULOMB_DV
from wpscatter.errors import DecayValidationError
from wpscatter.potentials import (LongRangePotential, PotentialModel, japanese, make_coulomb_like, make_long_range,
                                  make_short_range, make_time_modulated, make_zero_potential, multi_indices,
                                  tilde_bound_check, validate_decay, _fd_derivative)


def test_coulomb_values():
    V = make_coulomb_like(1.0, 0.5)
    assert V.value(0.0, [0.0]) == pytest.approx(1.0, abs=1e-15)
    x = np.array([[1e6]])
    assert V.value(0.0, x)[0] * np.sqrt(1e6) == pytest.approx(1.0, rel=1e-9)


@pytest.mark.parametrize("x", [0.5, 3.0, 10.0])
def test_coulomb_derivative_oracle(x):
    V = make_coulomb_like(0.1, 0.5)
    got = V.deriv((1,), 0.0, np.array([[x]]))[0]
    assert got == pytest.approx(COULOMB_DV[x], rel=1e-12)
    h = 1e-4
    fd = (V.value(0.0, [[x + h]])[0] - V.value(0.0, [[x - h]])[0]) / (2 * h)
    assert abs(fd - got) / abs(got) < 1e-7


def test_coulomb_rejects_exponent():
    for d in (0.0, 1.5, -0.2):
        with pytest.raises(ValueError):
            make_coulomb_like(1.0, d)


def test_decay_constants_coulomb():
    V = make_coulomb_like(1.0, 0.5)
    rep = validate_decay(V)
    assert rep.passed
    assert rep.constants[0] == pytest.approx(1.0, abs=1e-9)
    assert rep.constants[1] == pytest.approx(COULOMB_C1, rel=1e-8)
    assert V.constants[0] == pytest.approx(1.0, abs=1e-9)


def test_zero_potential_constants():
    rep = validate_decay(make_zero_potential())
    assert all(v == 0 for v in rep.constants.values())
    assert make_zero_potential().zero


@given(alpha=st.sampled_from([(2, 0), (1, 1), (0, 3), (2, 2), (4, 0), (3, 1)]),
       x=st.floats(-5, 5), y=st.floats(-5, 5))
def test_analytic_derivatives_2d_match_fd(alpha, x, y):
    V = make_coulomb_like(1.0, 0.7)
    pt = np.array([[x, y]])
    exact = V.deriv(alpha, 0.0, pt)[0]
    fd = _fd_derivative(lambda z: V.value(0.0, z), alpha, pt, h=1e-2)[0]
    assert abs(exact - fd) <= 5e-5 * (1 + abs(exact))


@given(x=st.floats(-30, 30))
def test_fd_fallback_is_fourth_order(x):
    # user potential without derivative callbacks
    V = make_long_range(lambda t, z: np.cos(np.sum(z, -1)) / (1 + np.sum(z * z, -1)), 1.0)
    pt = np.array([[x]])
    exact = -np.sin(x) / (1 + x * x) - 2 * x * np.cos(x) / (1 + x * x) ** 2
    assert abs(V.deriv((1,), 0.0, pt)[0] - exact) < 1e-7


def test_time_modulation():
    base = make_coulomb_like(1.0, 0.5)
    one = make_time_modulated(base, lambda t: 1.0, "one")
    x = np.linspace(-20, 20, 41)[:, None]
    assert np.array_equal(one.value(3.0, x), base.value(0.0, x))
    m = make_time_modulated(base, lambda t: (2 + np.sin(t)) / 3, "sin")
    rep = validate_decay(m, t_samples=np.linspace(0, 2 * np.pi, 33))
    for k, v in validate_decay(base).constants.items():
        assert rep.constants[k] <= v * (1 + 1e-12)
    assert rep.constants[0] == pytest.approx(1.0, rel=1e-3)
    z = make_time_modulated(base, lambda t: 0.0, "zero")
    assert z.zero and np.all(z.value(1.0, x) == 0)
    with pytest.raises(ValueError):
        make_time_modulated(base, lambda t: 2.0)
    with pytest.raises(ValueError):
        make_time_modulated(base, lambda t: np.sin(1e4 * t))


def test_short_range():
    S = make_short_range(0.1, 0.5)
    assert S.value(0.0, [0.0]) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        make_short_range(0.1, 0.0)
    # the weight (1 + |x|)^(1 + d) against (1 + |x|^2)^(-(1 + d)/2) peaks at |x| = 1
    assert S.bound == pytest.approx(0.1 * 2 ** 0.75, rel=1e-6)
    assert S.bound >= 0.1


def test_short_range_derivative_oracle():
    S = make_short_range(1.0, 0.5)
    x, h = 2.0, 1e-4
    exact = -1.5 * x * (1 + x * x) ** (-1.75)
    fd = (S.value(0, [[x + h]])[0] - S.value(0, [[x - h]])[0]) / (2 * h)
    assert abs(fd - exact) / abs(exact) < 1e-7


def test_validator_names_failure():
    bad = LongRangePotential(lambda t, x: np.where(np.abs(x[..., 0]) > 50, np.nan, 1.0), 0.5,
                             derivative=lambda a, t, x: np.zeros(x.shape[:-1]))
    rep = validate_decay(bad)
    assert not rep.passed and "x=" in rep.failure
    with pytest.raises(DecayValidationError):
        PotentialModel(bad)


@pytest.mark.parametrize("n", [1, 2])
def test_tilde_bound(n):
    V = make_coulomb_like(0.7, 0.4)
    assert tilde_bound_check(V, n) <= 1.0 + 1e-12


def test_real_valued_and_model():
    V = PotentialModel(make_coulomb_like(0.1, 0.5), make_short_range(0.1, 0.5))
    x = np.linspace(-10, 10, 11)[:, None]
    v = V(0.0, x)
    assert np.isrealobj(v)
    assert V.autonomous and not V.zero
    assert V.spec()["short"]["delta_s"] == 0.5


def test_multi_indices_and_japanese():
    assert sorted(multi_indices(2, 2)) == [(0, 2), (1, 1), (2, 0)]
    assert japanese(np.array([[3.0, 4.0]]))[0] == pytest.approx(np.sqrt(26))
