import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from nhdnls.errors import GridMismatchError
from nhdnls.fields import (
    Grid,
    GridField,
    antiderivative,
    cumint,
    dealias,
    deriv,
    derivative,
    field_from_csv,
    field_to_csv,
)

coeffs = st.lists(st.floats(-2, 2, allow_nan=False), min_size=4, max_size=4)


def trig(grid, c):
    th = 2 * np.pi * (grid.x - grid.origin) / grid.length
    return c[0] * np.cos(th) + c[1] * np.sin(2 * th) + c[2] * np.cos(3 * th) + c[3]


def test_grid_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        Grid(100, 1.0)
    with pytest.raises(ValueError):
        Grid(64, -1.0)


def test_spectral_derivative_of_sine_is_exact():
    g = Grid(64, 2 * np.pi)
    d = derivative(np.sin(3 * g.x), g.length, 1)
    assert np.max(np.abs(d - 3 * np.cos(3 * g.x))) < 1e-12
    d2 = derivative(np.sin(3 * g.x), g.length, 2)
    assert np.max(np.abs(d2 + 9 * np.sin(3 * g.x))) < 1e-11


def test_aperiodic_tanh_derivative():
    g = Grid(256, 48.0)
    f = np.tanh(g.x - 24.0)
    d = derivative(f, g.length, 1, aperiodic=True)
    assert np.max(np.abs(d - 1 / np.cosh(g.x - 24.0) ** 2)) < 1e-9
    # without detrending the jump rings through the whole box
    bad = derivative(f, g.length, 1, aperiodic=False)
    assert np.max(np.abs(bad - 1 / np.cosh(g.x - 24.0) ** 2)) > 1e-2


def test_fd4_converges_at_fourth_order():
    errs = []
    for n in (32, 64):
        g = Grid(n, 2 * np.pi)
        d = derivative(np.sin(g.x), g.length, 1, method="fd4")
        errs.append(np.max(np.abs(d - np.cos(g.x))))
    assert 12 < errs[0] / errs[1] < 20


def test_product_flag_rule():
    g = Grid(16, 1.0)
    a = GridField(np.ones(16), g, aperiodic=True)
    p = GridField(np.ones(16), g)
    assert (a + p).aperiodic
    assert not (a * p).aperiodic
    assert (a * a).aperiodic


def test_grid_mismatch():
    with pytest.raises(GridMismatchError):
        GridField(np.ones(16), Grid(16, 1.0)) + GridField(np.ones(16), Grid(16, 2.0))


def test_nan_rejected():
    with pytest.raises(ValueError):
        GridField(np.array([np.nan] * 8), Grid(8, 1.0))


def test_cumint_against_erf_oracle():
    g = Grid(256, 40.0)
    f = GridField(np.exp(-((g.x - 20.0) ** 2)), g)
    exact = 0.5 * np.sqrt(np.pi) * (1 + erf(g.x - 20.0))
    trap = cumint(f).values
    spec = cumint(f, method="spectral").values
    assert np.max(np.abs(spec - exact)) < 1e-12
    # trapezoid partial sums carry the dx^2 error term
    assert np.max(np.abs(trap - exact)) < g.dx**2 / 8
    assert abs(trap[-1] - np.sqrt(np.pi)) < 1e-12
    assert cumint(f).aperiodic


def test_cumint_origin_lower_limit():
    g = Grid(64, 2.0, origin=-1.0)
    F = cumint(GridField(np.ones(64), g), lower="origin")
    assert abs(np.interp(0.0, g.x, F.values)) < 1e-12
    with pytest.raises(ValueError):
        cumint(GridField(np.ones(16), Grid(16, 1.0, origin=1.0)), lower="origin")


def test_dealias_keeps_low_modes():
    g = Grid(64, 2 * np.pi)
    v = np.cos(3 * g.x) + np.cos(30 * g.x)
    assert np.max(np.abs(dealias(v) - np.cos(3 * g.x))) < 1e-12


def test_csv_roundtrip_is_exact():
    g = Grid(32, 5.0)
    rng = np.random.default_rng(1)
    f = GridField(rng.normal(size=32) + 1j * rng.normal(size=32), g)
    back = field_from_csv(field_to_csv(f), length=5.0)
    assert np.array_equal(back.values, f.values)


@settings(max_examples=40, deadline=None)
@given(coeffs, coeffs, st.floats(-3, 3))
def test_derivative_is_linear(c1, c2, s):
    g = Grid(32, 2 * np.pi)
    a, b = trig(g, c1), trig(g, c2)
    lhs = derivative(a + s * b, g.length)
    rhs = derivative(a, g.length) + s * derivative(b, g.length)
    assert np.allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(coeffs)
def test_spectral_antiderivative_inverts_derivative(c):
    g = Grid(32, 2 * np.pi)
    v = trig(g, c)
    F = antiderivative(v, g.length, "spectral") - c[3] * (g.x - g.origin)
    assert np.allclose(derivative(F, g.length) + c[3], v, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(coeffs)
def test_deriv_of_field_matches_array_api(c):
    g = Grid(32, 3.0)
    f = GridField(trig(g, c), g)
    assert np.allclose(deriv(f).values, derivative(f.values, 3.0), atol=1e-12)
