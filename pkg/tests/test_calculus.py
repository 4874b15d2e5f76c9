import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twisted_psido import symexpr as sx
from twisted_psido.algebra import matrix_backend, payload_delta, random_element
from twisted_psido.calculus import (DegreeLadderError, EllipticityError, ParamSymbol, Sector,
                                    adjoint_expand, ellipticity_check, make_symbol, parametrix,
                                    resolvent_power_symbol, sharp_compose, shift_by_mu_power,
                                    symbol_eval, twisted_component)
from twisted_psido.parser import parse_expr
from twisted_psido.symexpr import TwistMatrix

from helpers import degree_parts, points

SEEDS = st.integers(0, 2 ** 32 - 1)
B2 = TwistMatrix([[0.0, 0.6], [-0.6, 0.0]])


def _rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1.0)


def _mat_symbols(bk, rng, B, N=4):
    """Two classical symbols with noncentral coefficients on a matrix backend."""
    def c(scale=1.0):
        return sx.coef(random_element(bk, rng) * scale)
    x1, x2 = sx.xi_var(bk, 1), sx.xi_var(bk, 2)
    r = sx.abs_xi(bk, 1.0)
    f = make_symbol([sx.add(sx.xi_mono(bk, [2, 0]), sx.xi_mono(bk, [0, 2]), sx.mul(c(0.2), x1, x2)),
                     sx.add(sx.mul(c(), x1), sx.mul(x2, c())), c()], 2, N, B)
    g = make_symbol([sx.mul(c(), r), sx.add(sx.mul(c(), x1, sx.abs_xi(bk, -1.0)), c()),
                     sx.mul(c(), sx.abs_xi(bk, -1.0))], 1, N, B, cutoff=True)
    return f, g


# -- construction -------------------------------------------------------------

def test_make_symbol_splits_by_degree(scalar1):
    e = parse_expr("xi1^2 + 3*xi1 + 1", scalar1)
    f = make_symbol(e, 2, None)
    assert f.N == 3
    assert [c.degree for c in f.components] == [2, 1, 0]
    assert f.components[2].expr is sx.const(scalar1, 1.0)


def test_make_symbol_rejects_off_ladder(scalar1):
    with pytest.raises(DegreeLadderError):
        make_symbol(parse_expr("xi1^2 + |xi|^0.5", scalar1), 2, None)
    with pytest.raises(ValueError):
        make_symbol([parse_expr("xi1^2 + 1", scalar1)], 2, 1)


def test_sector_rejects_branch_cut():
    with pytest.raises(ValueError, match="branch cut"):
        Sector(2.0, 3.5)


def test_classical_times_param_is_param(scalar1, sector):
    f = make_symbol([parse_expr("xi1^2", scalar1)], 2, 2)
    g = parametrix(f, 2, 2, sector)
    assert isinstance(sharp_compose(f, g, 2), ParamSymbol)
    assert sharp_compose(f, g, 2).weight == pytest.approx(-2.0)


# -- composition ----------------------------------------------------------------

def test_first_order_twisted_term_by_hand(scalar2, rng):
    # f = xi1: f # g = xi1 g - i d_{B,1} g, d_{B,1} = sum_k B_k1 d_k = B_21 d_2
    g_e = parse_expr("xi1^2*|xi|^-3 + xi2*|xi|^-2", scalar2)
    f = make_symbol([sx.xi_var(scalar2, 1)], 1, 3, B2)
    g = make_symbol(g_e, -1, 3, B2)
    s = sharp_compose(f, g, 3)
    xi = points(rng, 2, 5)
    h = 1e-6
    d2 = (sx.eval_batch(g_e, xi + [0, h]) - sx.eval_batch(g_e, xi - [0, h])) / (2 * h)
    expect = xi[:, 0] * sx.eval_batch(g_e, xi) - 1j * (-0.6) * d2
    assert _rel(symbol_eval(s, xi), expect) <= 1e-8


def test_untwisted_composition_matches_taylor_sum(mat2, rng):
    # B = 0: f # g = sum_alpha (1/alpha!) d^alpha f delta^alpha g (finite for polynomial f)
    Z = TwistMatrix.zeros(2)
    f, g = _mat_symbols(mat2, rng, Z, N=5)
    s = sharp_compose(f, g, 5)
    xi = points(rng, 2, 4, 1.2, 2.0)
    total_f = sx.add(*f.exprs())
    total_g = sx.add(*g.exprs())
    gv = sx.eval_batch(total_g, xi)
    expect = np.zeros_like(gv)
    for a1 in range(3):
        for a2 in range(3 - a1):
            df = sx.eval_batch(sx.expr_dxi_multi(total_f, (a1, a2)), xi)
            dg = payload_delta(mat2, payload_delta(mat2, gv, (a1, 0)), (0, a2))
            expect += np.einsum("pij,pjk->pik", df, dg) / (math.factorial(a1) * math.factorial(a2))
    assert _rel(symbol_eval(s, xi), expect) <= 1e-12


def test_twisted_component_two_branches(mat2, rng):
    # degree m'-j part of g^{B,alpha} where g = sum_l g_{m'-l}; branch j < |alpha| and j >= |alpha|
    g = [sx.mul(sx.coef(random_element(mat2, rng)), sx.xi_mono(mat2, [3, 1])),
         sx.mul(sx.coef(random_element(mat2, rng)), sx.xi_mono(mat2, [1, 2])),
         sx.mul(sx.coef(random_element(mat2, rng)), sx.xi_mono(mat2, [2, 0])),
         sx.mul(sx.coef(random_element(mat2, rng)), sx.xi_var(mat2, 2))]
    degs = [4, 3, 2, 1]
    alpha = (2, 0)
    xi = np.array([[1.1, -0.7]])
    full = [sx.expr_twisted(gl, alpha, B2) for gl in g]

    def total(t):
        return sum(sx.eval_batch(fe, t * xi)[0] for fe in full)

    possible = sorted({d - k for d in degs for k in range(3)}, reverse=True)
    parts = dict(zip(possible, degree_parts(total, possible)))
    for j in (1, 3):
        got = sx.eval_batch(twisted_component(g, alpha, j, B2), xi)[0]
        assert np.allclose(got, parts[4 - j], atol=1e-8), j


@settings(max_examples=8, deadline=None)
@given(seed=SEEDS)
def test_sharp_associative_to_truncation(seed):
    rng = np.random.default_rng(seed)
    bk = matrix_backend([[0.0, 1.0, 2.0], [1.0, 0.0, -1.0]])
    f, g = _mat_symbols(bk, rng, B2, N=4)
    lhs = sharp_compose(sharp_compose(f, g, 4), f, 4)
    rhs = sharp_compose(f, sharp_compose(g, f, 4), 4)
    xi = points(rng, 2, 5, 1.0, 3.0)
    for j in range(4):
        assert _rel(symbol_eval(lhs, xi, components=[j]), symbol_eval(rhs, xi, components=[j])) <= 1e-8


def test_twist_enters_at_second_order(mat2, rng):
    f, g = _mat_symbols(mat2, rng, B2, N=3)
    Z = TwistMatrix.zeros(2)
    tw = sharp_compose(f, g, 3)
    fl = sharp_compose(f.with_twist(Z), g.with_twist(Z), 3)
    xi = points(rng, 2, 5)
    for j in (0, 1):
        assert _rel(symbol_eval(tw, xi, components=[j]), symbol_eval(fl, xi, components=[j])) <= 1e-10
    assert _rel(symbol_eval(tw, xi, components=[2]), symbol_eval(fl, xi, components=[2])) > 1e-3


# -- adjoint ---------------------------------------------------------------------

def test_adjoint_first_order_by_hand(mat1, rng):
    a = random_element(mat1, rng)
    f = make_symbol([sx.mul(sx.xi_var(mat1, 1), sx.coef(a))], 1, 2)
    fa = adjoint_expand(f, 2)
    xi = np.array([[1.7]])
    assert np.allclose(symbol_eval(fa, xi, components=[0])[0], 1.7 * a.payload.conj().T)
    assert np.allclose(symbol_eval(fa, xi, components=[1])[0],
                       payload_delta(mat1, a.payload.conj().T, [1]))


@settings(max_examples=8, deadline=None)
@given(seed=SEEDS)
def test_adjoint_involution(seed):
    rng = np.random.default_rng(seed)
    bk = matrix_backend([[0.0, 1.0, 2.0], [1.0, 0.0, -1.0]])
    f, g = _mat_symbols(bk, rng, B2, N=4)
    xi = points(rng, 2, 5)
    for s in (f, g):
        ss = adjoint_expand(adjoint_expand(s, 4), 4)
        for j in range(4):
            assert _rel(symbol_eval(ss, xi, components=[j]), symbol_eval(s, xi, components=[j])) <= 1e-8


# -- parametrix -----------------------------------------------------------------

def test_parametrix_identity_n2(mat2, rng, sector):
    f, _ = _mat_symbols(mat2, rng, B2, N=4)
    g = parametrix(f, 2, 4, sector)
    p = sharp_compose(shift_by_mu_power(f, 2), g, 4)
    xi = points(rng, 2, 10, 0.3, 3.0)
    mu = 2.0 * np.exp(1j * rng.uniform(sector.angle_min, sector.angle_max, 10))
    assert np.allclose(symbol_eval(p, xi, mu, [0]), np.eye(3), atol=1e-12)
    for j in (1, 2, 3):
        assert np.abs(symbol_eval(p, xi, mu, [j])).max() <= 1e-10


def test_parametrix_leading_term(scalar1, sector):
    f = make_symbol([sx.xi_mono(scalar1, [2])], 2, 2)
    g = parametrix(f, 2, 2, sector)
    assert g.components[0].expr is parse_expr("inv(xi1^2 - mu^2)", scalar1)
    assert g.components[0].is_global
    assert g.components[1].expr.is_zero()


def test_parametrix_non_polynomial_is_cutoff(scalar1, sector):
    f = make_symbol([parse_expr("2*xi1^2 + xi1*|xi|", scalar1)], 2, 2)
    g = parametrix(f, 2, 2, sector)
    assert not g.components[0].is_global


def test_ellipticity_failure(scalar1, sector):
    f = make_symbol([parse_expr("-xi1^2", scalar1)], 2, 1)
    rep = ellipticity_check(f, 2, sector)
    assert not rep.passed
    with pytest.raises(EllipticityError):
        parametrix(f, 2, 2, sector)


def test_resolvent_square_leading(scalar1, sector):
    f = make_symbol([sx.xi_mono(scalar1, [2])], 2, 3)
    g = parametrix(f, 2, 3, sector)
    g2 = resolvent_power_symbol(g, 2, 3)
    xi = np.array([[0.8]])
    mu = np.array([1.5j])
    expect = 1 / (0.64 - mu ** 2) ** 2
    assert symbol_eval(g2, xi, mu, [0]) == pytest.approx(expect)
    assert g2.weight == pytest.approx(-4.0)
