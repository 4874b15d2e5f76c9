import math

import numpy as np
import pytest

from twisted_psido.quadrature import (NODES, W_GAUSS, W_KRONROD, QuadratureError, QuadratureSpec,
                                      integrate, sphere_rule)


def test_rule_constants():
    assert W_KRONROD.sum() == pytest.approx(2.0, abs=1e-15)
    assert W_GAUSS.sum() == pytest.approx(2.0, abs=1e-15)
    # Gauss 7 integrates x^12 exactly, Kronrod 15 integrates x^22 exactly
    assert W_GAUSS @ NODES ** 12 == pytest.approx(2 / 13, rel=1e-14)
    assert W_KRONROD @ NODES ** 22 == pytest.approx(2 / 23, rel=1e-14)


@pytest.mark.parametrize("func,a,b,exact", [
    (lambda x: x ** 2, 0.0, 1.0, 1 / 3),
    (lambda x: np.exp(1j * x), 0.0, math.pi, 2j),
    (lambda x: x ** -2.0, 1.0, np.inf, 1.0),
    (lambda x: 1 / (1 + x ** 2), 2.0, np.inf, math.pi / 2 - math.atan(2.0)),
    (lambda x: np.sqrt(x), 0.0, 1.0, 2 / 3),
])
def test_integrate_known_values(func, a, b, exact):
    val, err = integrate(func, a, b, rtol=1e-12)
    assert val == pytest.approx(exact, rel=1e-11)
    assert err <= 1e-11 * abs(exact) + 1e-15


def test_integrate_breakpoint_kink():
    val, _ = integrate(lambda x: np.abs(x - 0.3), 0.0, 1.0, rtol=1e-13, breakpoints=(0.3,))
    assert val == pytest.approx(0.3 ** 2 / 2 + 0.7 ** 2 / 2, rel=1e-13)


def test_integrate_is_deterministic():
    f = lambda x: np.sin(30 * x) / (1 + x)
    assert integrate(f, 0.0, 5.0, rtol=1e-12) == integrate(f, 0.0, 5.0, rtol=1e-12)


def test_budget_exhaustion_raises():
    with pytest.raises(QuadratureError):
        integrate(lambda x: x ** -0.9, 0.0, 1.0, rtol=1e-14, max_intervals=8)


def test_sphere_rules():
    w1 = sphere_rule(1)[1]
    assert w1.sum() == 2.0
    pts, w = sphere_rule(2, 32)
    assert w.sum() == pytest.approx(2 * math.pi)
    assert w @ pts[:, 0] ** 2 == pytest.approx(math.pi, rel=1e-14)
    with pytest.raises(ValueError):
        sphere_rule(3)


def test_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(circle_points=7)
    with pytest.raises(ValueError):
        QuadratureSpec(rtol=0.0)
