import math

import numpy as np
import pytest
from scipy.special import binom

from twisted_psido import symexpr as sx
from twisted_psido.calculus import HomComponent, UPPER_HALF, make_symbol
from twisted_psido.parser import parse_expr
from twisted_psido.quadrature import QuadratureSpec
from twisted_psido.trace_asym import (TruncationError, coeff_log_const, coeff_power, expansion_fit,
                                      trace_expansion_full, trace_quadrature_oracle)

QUAD = QuadratureSpec(rtol=1e-10)


def _coeffs(e):
    return {ex: (c, cl) for ex, c, cl in e.collected()}


def test_free_resolvent_n1(scalar1):
    f = make_symbol([parse_expr("xi1^2", scalar1)], 2, 2)
    e = trace_expansion_full(None, f, 2, 1, 2, UPPER_HALF, QUAD)
    nz = e.nonzero(1e-14)
    assert len(nz) == 1
    ex, c, cl = nz[0]
    assert ex == -1 and cl == 0
    assert c == pytest.approx(0.5j, rel=1e-12)
    lam = [t for t in e.lambda_terms() if abs(t.value) > 1e-14]
    assert len(lam) == 1 and lam[0].exponent == -0.5
    assert lam[0].value == pytest.approx(0.5, rel=1e-12)


def test_free_resolvent_square_n2(scalar2):
    # int (|xi|^2 - mu^2)^-2 dxi / (2 pi)^2 = -1 / (4 pi mu^2)
    f = make_symbol([parse_expr("xi1^2 + xi2^2", scalar2)], 2, 2)
    e = trace_expansion_full(None, f, 2, 2, 2, UPPER_HALF, QUAD)
    c = _coeffs(e)
    assert c[-2.0][0] == pytest.approx(-1 / (4 * math.pi), rel=1e-8)
    mu = 3j
    s = parse_expr("inv(xi1^2 + xi2^2 - mu^2) * inv(xi1^2 + xi2^2 - mu^2)", scalar2)
    assert trace_quadrature_oracle(s, mu, QUAD) == pytest.approx(e.evaluate(mu), rel=1e-8)


def test_shifted_scalar_binomial_series(scalar1):
    # 1 / (2 sqrt(c - mu^2)) = (i / 2 mu) sum_p binom(-1/2, p) (-c / mu^2)^p
    c = 0.7
    f = make_symbol([parse_expr("xi1^2", scalar1), None, sx.const(scalar1, c)], 2, 8)
    e = trace_expansion_full(None, f, 2, 1, 8, UPPER_HALF, QUAD)
    got = _coeffs(e)
    for p in range(4):
        expect = 0.5j * binom(-0.5, p) * (-c) ** p
        assert got[-1.0 - 2 * p][0] == pytest.approx(expect, rel=1e-8)


def test_cutoff_weight_log_and_constants(scalar1):
    # int_{|xi|>=1} |xi|^-1 (xi^2 - mu^2)^-1 dxi / 2 pi = log(1 + t^2) / (2 pi t^2), t = -i mu
    f = make_symbol([parse_expr("xi1^2", scalar1)], 2, 4)
    a = make_symbol([parse_expr("|xi|^-1", scalar1)], -1, 1, cutoff=True)
    e = trace_expansion_full(a, f, 2, 1, 4, UPPER_HALF, QUAD)
    got = _coeffs(e)
    assert got[-2.0][1] == pytest.approx(-1 / math.pi, rel=1e-10)
    assert got[-2.0][0] == pytest.approx(0.5j, abs=1e-10)
    assert got[-4.0][0] == pytest.approx(1 / (2 * math.pi), rel=1e-10)
    assert -6.0 not in got or abs(got[-6.0][0]) < 1e-14
    comp = HomComponent(-3.0, parse_expr("|xi|^-1 * inv(xi1^2 - mu^2)", scalar1), False)
    mus = np.array([8j, 16j, 32j, 64j])
    rep = expansion_fit(e, lambda mu: trace_quadrature_oracle(comp, mu, QUAD), mus)
    # after both exponents the residual drops like mu^-6 (next term +1/(4 pi) mu^-6)
    assert abs(rep.slopes[-1][0] + 6.0) <= 0.2


def test_standalone_log_coefficient(scalar1):
    comp = HomComponent(-1.0, parse_expr("|xi|^-1", scalar1), False)
    res = coeff_log_const(comp, quad=QUAD)
    assert res.log_coefficient() == pytest.approx(1 / math.pi, rel=1e-12)


def test_truncation_guard(scalar1):
    comp = HomComponent(-3.0, parse_expr("|xi|^-1 * inv(xi1^2 - mu^2)", scalar1), False)
    with pytest.raises(TruncationError):
        coeff_log_const(comp, M=0, quad=QUAD)


def test_coeff_power_is_exact_by_scaling(scalar1):
    comp = HomComponent(-2.0, parse_expr("inv(xi1^2 - mu^2)", scalar1), True)
    for u in (1j, np.exp(1.0j), np.exp(2.0j)):
        ex, c = coeff_power(comp, u, quad=QUAD)
        assert ex == -1 and c == pytest.approx(0.5j, rel=1e-9)


def test_arg_independence_cutoff_case(scalar1):
    f = make_symbol([parse_expr("xi1^2", scalar1)], 2, 3)
    a = make_symbol([parse_expr("|xi|^-1", scalar1)], -1, 1, cutoff=True)
    vals = []
    for ang in np.linspace(0.9, 2.2, 5):
        e = trace_expansion_full(a, f, 2, 1, 3, UPPER_HALF, QUAD, unit=np.exp(1j * ang))
        vals.append(np.array([c for _, c, _ in e.collected()] + [cl for _, _, cl in e.collected()]))
    ref = vals[0]
    assert max(np.abs(v - ref).max() for v in vals) <= 1e-6 * np.abs(ref).max()


def test_order_guard(scalar1):
    f = make_symbol([parse_expr("xi1^2", scalar1)], 2, 2)
    a = make_symbol([parse_expr("xi1", scalar1)], 1, 1)
    with pytest.raises(ValueError, match="-k m"):
        trace_expansion_full(a, f, 2, 1, 2, UPPER_HALF)


def test_threads_are_bit_stable(mat1):
    from twisted_psido.algebra import element
    v = element(mat1, [[1, 0.5, 0], [0.5, 2, 0], [0, 0, 3]])
    f = make_symbol([parse_expr("xi1^2", mat1), None, parse_expr("v", mat1, {"v": v})], 2, 4)
    a = make_symbol([parse_expr("|xi|^-1", mat1)], -1, 1, cutoff=True)
    e1 = trace_expansion_full(a, f, 2, 1, 4, UPPER_HALF, QUAD, threads=1)
    e3 = trace_expansion_full(a, f, 2, 1, 4, UPPER_HALF, QUAD, threads=3)
    assert e1.to_csv("mu") == e3.to_csv("mu")
    assert e1.to_csv("lambda") == e3.to_csv("lambda")


def test_csv_layout(scalar1):
    f = make_symbol([parse_expr("xi1^2", scalar1)], 2, 2)
    e = trace_expansion_full(None, f, 2, 1, 2, UPPER_HALF, QUAD)
    lines = e.to_csv("mu").splitlines()
    assert lines[0] == "kind,index,exponent,real,imag,provenance"
    assert lines[1].startswith("power,0,-1,0,0.5")
