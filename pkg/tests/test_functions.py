import numpy as np
import pytest

from tvqueue.functions import (
    ConstantFn,
    LinearFn,
    PiecewisePolyFn,
    SinusoidFn,
    fn_from_config,
)


def test_constant():
    f = ConstantFn(2.5)
    t = np.array([0.0, 1.0, 7.3])
    assert np.all(f(t) == 2.5)
    assert np.all(f.deriv(t) == 0.0)
    assert np.all(f.deriv2(t) == 0.0)


def test_linear():
    f = LinearFn(1.0, -0.5)
    assert f(4.0) == pytest.approx(-1.0)
    assert np.all(f.deriv(np.array([0.0, 9.0])) == -0.5)
    assert f.deriv2(3.0) == 0.0


def test_sinusoid_derivatives_match_finite_differences():
    f = SinusoidFn(1.0, 0.6, 2.0, 0.3)
    t = np.linspace(0.0, 5.0, 50)
    h = 1e-6
    fd1 = (f(t + h) - f(t - h)) / (2 * h)
    fd2 = (f(t + h) - 2 * f(t) + f(t - h)) / h**2
    assert np.max(np.abs(f.deriv(t) - fd1)) < 1e-8
    assert np.max(np.abs(f.deriv2(t) - fd2)) < 1e-3


def test_piecewise_poly_eval_and_breakpoints():
    # pieces: 1 + t on [0,1), 2 + 0.5 (t-1) on [1,3)
    f = PiecewisePolyFn(knots=(0.0, 1.0, 3.0), coeffs=((1.0, 1.0), (2.0, 0.5)))
    assert f(0.5) == pytest.approx(1.5)
    assert f(2.0) == pytest.approx(2.5)
    assert f.deriv(0.5) == pytest.approx(1.0)
    assert f.deriv(2.0) == pytest.approx(0.5)
    # continuation past the last knot uses the final piece
    assert f(4.0) == pytest.approx(2.0 + 0.5 * 3.0)
    assert list(f.breakpoints()) == [1.0]


def test_piecewise_poly_shape_validation():
    with pytest.raises(ValueError):
        PiecewisePolyFn(knots=(0.0, 1.0), coeffs=((1.0,), (2.0,)))


def test_config_dispatch():
    f = fn_from_config({"kind": "sinusoid", "params": {"a": 1.0, "b": 0.6}})
    assert f(np.pi / 2) == pytest.approx(1.6)
    g = fn_from_config({"kind": "constant", "params": {"value": 3.0}})
    assert g(11.0) == 3.0


def test_config_unknown_kind():
    with pytest.raises(ValueError, match="unknown function kind"):
        fn_from_config({"kind": "spline"})
