import math

import numpy as np
import pytest

from twisted_psido import symexpr as sx
from twisted_psido.algebra import element
from twisted_psido.bounded import (discretized_opnorm, kernel_from_symbol, kernel_grid, schur_bound,
                                   sharper_schur_report)
from twisted_psido.calculus import make_symbol
from twisted_psido.parser import parse_expr


def _exp_kernel(x, y):
    return np.exp(-np.abs(x - y))


def test_schur_constants_exp_kernel():
    # int_{-L}^{L} e^{-|x-y|} dy <= 2, attained at the centre up to 2 e^-L
    kg = kernel_grid(_exp_kernel, 20.0, 1025)
    res = schur_bound(kg)
    assert res.alpha == pytest.approx(2 - 2 * math.exp(-20), rel=1e-3)
    assert res.beta == pytest.approx(res.alpha, rel=1e-12)
    assert res.bound == pytest.approx(4 * math.sqrt(res.alpha * res.beta))


def test_opnorm_against_dense_svd():
    kg = kernel_grid(_exp_kernel, 5.0, 200)
    w = kg.weights
    A = np.sqrt(w)[:, None] * _exp_kernel(kg.x[:, None], kg.x[None, :]) * np.sqrt(w)[None, :]
    assert discretized_opnorm(kg) == pytest.approx(np.linalg.svd(A, compute_uv=False)[0], rel=1e-12)


def test_opnorm_converges_to_continuum():
    # the continuum norm on [-L, L] increases to 2 as L grows; grid refinement is stable
    vals = [discretized_opnorm(kernel_grid(_exp_kernel, 10.0, G)) for G in (400, 800, 1600)]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0]) + 1e-12
    assert vals[2] < 2.0


def test_weighted_schur_requires_positive_weights():
    kg = kernel_grid(_exp_kernel, 2.0, 16, p=np.zeros(16))
    with pytest.raises(ValueError):
        schur_bound(kg)


def test_kernel_grid_validation():
    with pytest.raises(ValueError):
        kernel_grid(lambda x, y: np.full((1, 1), np.nan), 1.0, 1)


def test_block_opnorm_matrix_kernel(mat1):
    # diagonal-blocked kernel: norm is the max of the scalar norms
    D = np.diag([1.0, 0.5, 0.25])

    def kern(x, y):
        return _exp_kernel(x, y)[..., None, None] * D

    kg = kernel_grid(kern, 5.0, 150, backend=mat1)
    scal = discretized_opnorm(kernel_grid(_exp_kernel, 5.0, 150))
    assert discretized_opnorm(kg) == pytest.approx(scal, rel=1e-10)
    assert schur_bound(kg).alpha == pytest.approx(schur_bound(kernel_grid(_exp_kernel, 5.0, 150)).alpha)


def test_kernel_from_symbol_scalar(scalar1):
    f = make_symbol([parse_expr("inv(1 + xi1^2)", scalar1)], -2, 1, check=False, cutoff=True, interior="formula")
    for x, y in [(0.0, 0.0), (0.3, -0.9), (2.0, 0.5), (-1.5, 1.5)]:
        k = kernel_from_symbol(f, x, y)
        assert k.payload == pytest.approx(0.5 * math.exp(-abs(x - y)), abs=1e-8)


def test_kernel_from_symbol_matrix_shift(mat1):
    # f = (1 + xi^2)^-1 a: K(x, y) = alpha_{-x}(a) e^{-|x-y|} / 2
    a = element(mat1, [[1.0, 0.4, 0.0], [0.0, 2.0, 0.3], [0.2, 0.0, 1.0]])
    f = make_symbol([sx.mul(parse_expr("inv(1 + xi1^2)", mat1), sx.coef(a))], -2, 1, check=False, cutoff=True, interior="formula")
    x, y = 0.7, -0.2
    k = kernel_from_symbol(f, x, y)
    expect = a.alpha([-x]).payload * 0.5 * math.exp(-abs(x - y))
    assert np.allclose(k.payload, expect, atol=1e-8)


def test_sharper_report_flags():
    rep = sharper_schur_report(kernel_grid(_exp_kernel, 8.0, 300))
    assert rep["sqrt_dominates"]
    assert 0.9 < rep["ratio_to_sqrt"] <= 1.0 + 1e-9
