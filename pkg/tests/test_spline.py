import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import CubicSpline

from mlmc_risk.models import poisson_phi_exact
from mlmc_risk.spline import (
    C1,
    C3,
    ThetaGrid,
    constants,
    derivative_matrix,
    evaluate,
    fit,
    gram_matrix,
    lebesgue_sum_constant,
    sup_norm_deriv,
)

coef = st.floats(-5, 5, allow_nan=False)


def test_grid_basics():
    g = ThetaGrid(1.5, 2.5, 11)
    assert g.length == 1.0
    assert g.spacing == pytest.approx(0.1)
    assert g.nodes[0] == 1.5 and g.nodes[-1] == 2.5
    assert g.fine(1000).size == 1000
    with pytest.raises(ValueError):
        ThetaGrid(2.0, 1.0, 10)


def test_fit_needs_four_nodes():
    with pytest.raises(ValueError):
        fit(ThetaGrid(0, 1, 3), [0, 1, 2])


def test_matches_scipy_not_a_knot():
    g = ThetaGrid(0.0, 2.0, 9)
    y = np.sin(3 * g.nodes) + g.nodes**2
    ref = CubicSpline(g.nodes, y, bc_type="not-a-knot")
    t = g.fine(777)
    curve = fit(g, y)
    for m in range(4):
        np.testing.assert_allclose(curve(t, m), ref(t, m), atol=1e-10)


def test_linear_and_quadratic_reproduction():
    g = ThetaGrid(1.5, 2.5, 7)
    t = g.fine(500)
    lin = fit(g, g.nodes)
    np.testing.assert_allclose(lin(t), t, atol=1e-13)
    np.testing.assert_allclose(lin.coefficients[:, 2], 0.0, atol=1e-12)
    quad = fit(g, g.nodes**2)
    np.testing.assert_allclose(quad(t, 2), 2.0, atol=1e-10)


def test_cubic_reproduction_dense():
    g = ThetaGrid(1.5, 2.5, 10)
    t = g.fine(1000)
    np.testing.assert_allclose(fit(g, g.nodes**3)(t), t**3, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(coef, coef, coef, coef, st.integers(4, 40), st.floats(-3, 3), st.floats(0.1, 5))
def test_cubic_reproduction_property(a, b, c, d, n, lo, width):
    g = ThetaGrid(lo, lo + width, n)
    t = g.fine(200) - lo
    x = g.nodes - lo
    curve = fit(g, a + b * x + c * x**2 + d * x**3)
    exact = [a + b * t + c * t**2 + d * t**3, b + 2 * c * t + 3 * d * t**2, 2 * c + 6 * d * t]
    for m in range(3):
        np.testing.assert_allclose(curve(t + lo, m), exact[m], atol=1e-10 * max(1, width) ** 3 * 50)


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 30), coef, coef, st.integers(0, 2**31))
def test_linearity_property(n, a, b, seed):
    g = ThetaGrid(0.0, 1.0, n)
    r = np.random.default_rng(seed)
    u, v = r.normal(size=n), r.normal(size=n)
    t = g.fine(300)
    lhs = fit(g, a * u + b * v)(t)
    rhs = a * fit(g, u)(t) + b * fit(g, v)(t)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) * 10)


def test_interpolates_nodes_and_is_c2():
    g = ThetaGrid(0.0, 1.0, 12)
    y = np.random.default_rng(0).normal(size=12)
    curve = fit(g, y)
    np.testing.assert_allclose(curve(g.nodes), y, atol=1e-13)
    inner = g.nodes[1:-1]
    for m in range(3):
        left, right = curve(inner - 1e-10, m), curve(inner + 1e-10, m)
        np.testing.assert_allclose(left, right, atol=1e-6)


def test_evaluate_outside_raises():
    curve = fit(ThetaGrid(0.0, 1.0, 5), np.arange(5.0))
    with pytest.raises(ValueError):
        evaluate(curve, 0, 1.1)
    with pytest.raises(ValueError):
        evaluate(curve, 4, 0.5)


def test_convergence_orders_on_exact_phi():
    t = np.linspace(1.5, 2.5, 10_001)
    ns = [10, 20, 40, 80]
    for m in range(3):
        errs = []
        for n in ns:
            g = ThetaGrid(1.5, 2.5, n)
            curve = fit(g, poisson_phi_exact(g.nodes, 0.7))
            errs.append(np.max(np.abs(curve(t, m) - poisson_phi_exact(t, 0.7, deriv=m))))
        slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
        assert abs(slope + (4 - m)) <= 0.5, (m, slope)


def test_derivative_at_var_is_small():
    q = 1.885696
    for n in (20, 40):
        g = ThetaGrid(1.5, 2.5, n)
        assert abs(fit(g, poisson_phi_exact(g.nodes, 0.7))(q, 1)) <= 1e-3


def test_sup_norm_deriv():
    g = ThetaGrid(1.5, 2.5, 8)
    const = fit(g, np.full(8, 3.0))
    for m in (1, 2):
        assert sup_norm_deriv(const, m) == pytest.approx(0.0, abs=1e-12)
    assert sup_norm_deriv(fit(g, g.nodes), 1) == pytest.approx(1.0, abs=1e-12)
    g30 = ThetaGrid(1.5, 2.5, 30)
    curve = fit(g30, poisson_phi_exact(g30.nodes, 0.7))
    exact = np.max(np.abs(poisson_phi_exact(np.linspace(1.5, 2.5, 100_001), 0.7, deriv=1)))
    assert sup_norm_deriv(curve, 1) == pytest.approx(exact, rel=1e-3)


def test_derivative_matrix_matches_curve():
    g = ThetaGrid(1.5, 2.5, 9)
    y = np.cos(g.nodes)
    curve = fit(g, y)
    for m in range(3):
        np.testing.assert_allclose(derivative_matrix(g, m, 100) @ y, curve(g.fine(100), m), atol=1e-12)


def test_gram_matrix_is_spd_and_integrates():
    g = ThetaGrid(0.0, 2.0, 7)
    B0 = gram_matrix(g, 0)
    assert np.allclose(B0, B0.T)
    assert np.linalg.eigvalsh(B0)[0] > 0
    # ones^T B0 ones = integral of 1^2 over Theta
    assert np.ones(7) @ B0 @ np.ones(7) == pytest.approx(2.0, rel=1e-12)
    # x^T B1 x for values of theta: integral of 1 = |Theta|
    assert g.nodes @ gram_matrix(g, 1) @ g.nodes == pytest.approx(2.0, rel=1e-12)


def test_constants_exact():
    assert C1 == {0: 5 / 384, 1: 1 / 24, 2: 3 / 8}
    assert C3 == 7 * (2 * math.sqrt(7) + 1) / 27
    assert C3 == pytest.approx(1.631130, abs=1e-6)
    c1, c2, c3, cn = constants(0, 10, 1.0)
    assert (c1, c2, c3) == (5 / 384, 1.0, C3)
    assert constants(1, 10, 2.0)[1] == 18 / 2.0
    assert constants(2, 10, 2.0)[1] == 48 / 4.0
    # the sum runs to n + 1, so n = 1 keeps the k = 2 term
    one = 2 * math.pi * (math.log(2) + math.sqrt(8 / math.pi) / (4 * math.sqrt(math.log(2))))
    assert lebesgue_sum_constant(1) == pytest.approx(one, rel=1e-15)
    tail = math.sqrt(8 / math.pi) * sum(k**-2 * math.log(k) ** -0.5 for k in range(2, 12))
    assert cn == pytest.approx(2 * math.pi * (math.log(11) + tail), rel=1e-14)
