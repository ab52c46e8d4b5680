import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elsroc import _kernels
from elsroc.transforms import (
    TransformDomainError,
    TransformPair,
    TransformRangeError,
    log_jacobian,
    t_alpha,
    t_alpha_deriv,
    t_alpha_inv,
    t_alpha_inv_clamped,
)

alphas = st.floats(min_value=0.0, max_value=2.0)
units = st.floats(min_value=1e-6, max_value=1 - 1e-6)


def test_special_values():
    assert t_alpha(1, 0.5) == 0.0
    assert t_alpha(2, 0.5) == pytest.approx(-1.386294, abs=1e-6)
    assert t_alpha(0, 0.5) == pytest.approx(1.386294, abs=1e-6)


def test_derivative_values():
    assert t_alpha_deriv(1, 0.5) == pytest.approx(4.0)
    assert t_alpha_deriv(2, 0.25) == pytest.approx(8.0)
    assert t_alpha_deriv(0.6, 0.8) == pytest.approx(7.75)


def test_inverse_values():
    assert t_alpha_inv(1, 0.0) == pytest.approx(0.5, abs=1e-15)
    assert t_alpha_inv(2, -1.386294) == pytest.approx(0.5, abs=1e-6)
    assert t_alpha_inv(0.6, t_alpha(0.6, 0.73)) == pytest.approx(0.73, abs=1e-10)


def test_special_case_collapse():
    x = np.linspace(0.001, 0.999, 97)
    np.testing.assert_allclose(t_alpha(1, x), np.log(x) - np.log1p(-x), rtol=0, atol=1e-13)
    np.testing.assert_array_equal(t_alpha(2, x), 2 * np.log(x))
    np.testing.assert_array_equal(t_alpha(0, x), -2 * np.log1p(-x))


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_domain_errors(bad):
    with pytest.raises(TransformDomainError):
        t_alpha(1.0, bad)
    with pytest.raises(TransformDomainError):
        t_alpha_deriv(0.6, bad)


def test_alpha_range():
    with pytest.raises(ValueError):
        t_alpha(2.5, 0.5)
    with pytest.raises(ValueError):
        TransformPair(-0.1, 1.0)
    TransformPair(1.7, 0.3)  # arbitrary values in [0, 2] are fine


def test_boundary_inverse_range_errors():
    with pytest.raises(TransformRangeError):
        t_alpha_inv(2, 0.1)
    with pytest.raises(TransformRangeError):
        t_alpha_inv(0, -0.1)
    assert t_alpha_inv_clamped(2, 0.1) == 1.0
    assert t_alpha_inv_clamped(0, -0.1) == 0.0


def test_closed_form_inverses():
    z = np.linspace(-8, -0.01, 50)
    np.testing.assert_allclose(t_alpha_inv(2, z), np.exp(z / 2), rtol=1e-15)
    z = np.linspace(0.01, 8, 50)
    np.testing.assert_allclose(t_alpha_inv(0, z), 1 - np.exp(-z / 2), rtol=1e-14)


@settings(max_examples=300, deadline=None)
@given(alphas, units, units)
def test_monotone(a, x1, x2):
    if x1 == x2:
        return
    lo, hi = min(x1, x2), max(x1, x2)
    assert t_alpha(a, lo) < t_alpha(a, hi)


@settings(max_examples=300, deadline=None)
@given(alphas, units)
def test_round_trip(a, x):
    assert t_alpha_inv(a, t_alpha(a, x)) == pytest.approx(x, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(alphas, st.floats(min_value=1e-3, max_value=1 - 1e-3))
def test_derivative_matches_finite_difference(a, x):
    h = 1e-6 * min(x, 1 - x)
    fd = (t_alpha(a, x + h) - t_alpha(a, x - h)) / (2 * h)
    assert t_alpha_deriv(a, x) == pytest.approx(fd, rel=1e-6)


def test_inverse_vectorised_matches_scalar_and_numpy_kernel():
    z = np.linspace(-40, 40, 2001)
    for a in (0.05, 0.6, 1.4, 1.95):
        x = t_alpha_inv(a, z)
        assert np.all(np.diff(x) >= 0)
        np.testing.assert_allclose(_kernels._t_inv_vec(a, z), x, atol=1e-15)
        assert t_alpha_inv(a, float(z[700])) == pytest.approx(x[700], abs=1e-15)


def test_log_jacobian_values():
    assert log_jacobian(TransformPair(1, 1), (0.5, 0.5)) == pytest.approx(2 * math.log(4))
    assert log_jacobian(TransformPair(2, 0), (0.25, 0.75)) == pytest.approx(2 * math.log(8))


@pytest.mark.parametrize("pair", [TransformPair(0.6, 1.4), TransformPair(2, 0), TransformPair(1, 0.6)])
def test_log_jacobian_finite_difference(pair):
    y = np.array([0.5 + 0.013, 0.5 - 0.021])
    h = 1e-6
    dp = (t_alpha(pair.alpha_p, y[0] + h) - t_alpha(pair.alpha_p, y[0] - h)) / (2 * h)
    dq = (t_alpha(pair.alpha_q, y[1] + h) - t_alpha(pair.alpha_q, y[1] - h)) / (2 * h)
    assert log_jacobian(pair, y) == pytest.approx(math.log(dp) + math.log(dq), abs=1e-6)
