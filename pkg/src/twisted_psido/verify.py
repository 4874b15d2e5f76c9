"""
Property checks run by the ``verify`` command.

Each check returns a :class:`CheckResult`; tolerances are the ones the test
suite uses for the same properties.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import symexpr as sx
from .algebra import AlgebraBackend, random_element
from .bounded import discretized_opnorm, schur_bound
from .calculus import (PolyhomSymbol, Sector, adjoint_expand, ellipticity_check, parametrix, sharp_compose, shift_by_mu_power, symbol_eval)
from .symexpr import TwistMatrix


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value, "tol": self.tol,
                "detail": self.detail}


def _rel(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1.0))


def random_xi(rng: np.random.Generator, n: int, count: int, rmin: float = 1.0, rmax: float = 3.0):
    """Points with ``rmin <= |xi| <= rmax`` and random directions."""
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.uniform(rmin, rmax, (count, 1))


def random_mu(rng: np.random.Generator, sector: Sector, count: int, rmin=None, rmax=None):
    a = rng.uniform(sector.angle_min, sector.angle_max, count)
    r0 = sector.r_min if rmin is None else rmin
    r1 = min(sector.r_max, 10 * r0) if rmax is None else rmax
    return np.exp(rng.uniform(math.log(r0), math.log(r1), count)) * np.exp(1j * a)


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------

def check_algebra(bk: AlgebraBackend, rng: np.random.Generator, trials: int = 5) -> list:
    """Traciality, alpha-invariance of psi, psi o delta = 0 and Leibniz."""
    tr = inv = dz = lb = 0.0
    for _ in range(trials):
        a = random_element(bk, rng)
        b = random_element(bk, rng)
        tr = max(tr, abs((a * b).trace() - (b * a).trace()))
        t = rng.uniform(-2, 2, bk.n)
        inv = max(inv, abs(a.alpha(t).trace() - a.trace()))
        for j in range(bk.n):
            g = [0] * bk.n
            g[j] = 1
            dz = max(dz, abs(a.delta(g).trace()))
            lhs = (a * b).delta(g)
            rhs = a.delta(g) * b + a * b.delta(g)
            lb = max(lb, (lhs - rhs).norm() / max(lhs.norm(), 1.0))
    return [CheckResult("algebra traciality", tr <= 1e-10, tr, 1e-10),
            CheckResult("algebra alpha-invariance", inv <= 1e-10, inv, 1e-10),
            CheckResult("algebra psi o delta = 0", dz <= 1e-10, dz, 1e-10),
            CheckResult("algebra Leibniz rule", lb <= 1e-10, lb, 1e-10)]


# ---------------------------------------------------------------------------
# expressions and symbols
# ---------------------------------------------------------------------------

def check_homogeneity(name: str, f: PolyhomSymbol, rng, count: int = 10, t: float = 2.5) -> CheckResult:
    """``f_{m-j}(t xi) = t^(m-j) f_{m-j}(xi)`` for ``|xi| >= 1``."""
    worst = 0.0
    xi = random_xi(rng, f.backend.n, count)
    for c in f.components:
        if c.is_zero():
            continue
        a = sx.eval_batch(c.expr, t * xi)
        b = (t ** c.degree) * sx.eval_batch(c.expr, xi)
        worst = max(worst, _rel(a, b))
    return CheckResult(f"{name}: homogeneity scaling", worst <= 1e-10, worst, 1e-10)


def check_dxi(name: str, f: PolyhomSymbol, rng, count: int = 6, h: float = 1e-5) -> CheckResult:
    """Symbolic ``d/dxi_j`` against central differences (relative 1e-5)."""
    n = f.backend.n
    worst = 0.0
    xi = random_xi(rng, n, count, 1.0, 2.0)
    for c in f.components:
        if c.is_zero():
            continue
        scale_ = max(float(np.abs(sx.eval_batch(c.expr, xi)).max()), 1.0)
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            fd = (sx.eval_batch(c.expr, xi + e) - sx.eval_batch(c.expr, xi - e)) / (2 * h)
            ex = sx.eval_batch(sx.expr_dxi(c.expr, j), xi)
            worst = max(worst, float(np.abs(fd - ex).max()) / scale_)
    return CheckResult(f"{name}: d/dxi vs finite differences", worst <= 1e-5, worst, 1e-5)


def _max_component_diff(f, g, xi, mu=None, upto=None) -> float:
    N = min(f.N, g.N) if upto is None else upto
    worst = 0.0
    for j in range(N):
        a = symbol_eval(f, xi, mu, [j])
        b = symbol_eval(g, xi, mu, [j])
        worst = max(worst, _rel(a, b))
    return worst


def check_adjoint_involution(name: str, f: PolyhomSymbol, rng, count: int = 10) -> CheckResult:
    ff = adjoint_expand(adjoint_expand(f, f.N), f.N)
    xi = random_xi(rng, f.backend.n, count)
    worst = _max_component_diff(ff, f, xi)
    return CheckResult(f"{name}: adjoint involution", worst <= 1e-8, worst, 1e-8)


def check_twist_independence(f: PolyhomSymbol, g: PolyhomSymbol, B: TwistMatrix, rng,
                             count: int = 20) -> CheckResult:
    """Components ``j <= 1`` of ``f # g`` do not depend on the twist."""
    n = f.backend.n
    N = max(2, min(f.N, g.N))
    Z = TwistMatrix.zeros(n)
    tw = sharp_compose(f.with_twist(B), g.with_twist(B), N)
    fl = sharp_compose(f.with_twist(Z), g.with_twist(Z), N)
    xi = random_xi(rng, n, count)
    worst = _max_component_diff(tw, fl, xi, upto=2)
    return CheckResult("j ≤ 1 twist-independence", worst <= 1e-10, worst, 1e-10)


def check_associativity(f: PolyhomSymbol, g: PolyhomSymbol, rng, count: int = 10) -> CheckResult:
    N = min(f.N, g.N)
    lhs = sharp_compose(sharp_compose(f, g, N), f, N)
    rhs = sharp_compose(f, sharp_compose(g, f, N), N)
    xi = random_xi(rng, f.backend.n, count)
    worst = _max_component_diff(lhs, rhs, xi)
    return CheckResult("sharp associativity to truncation", worst <= 1e-8, worst, 1e-8)


def check_parametrix(f: PolyhomSymbol, m: int, N: int, sector: Sector, rng, count: int = 20) -> list:
    """Ellipticity and ``(f - mu^m) # g = 1`` componentwise."""
    rep = ellipticity_check(f, m, sector)
    out = [CheckResult("ellipticity with parameter", rep.passed, rep.worst_condition, math.inf,
                       "" if rep.passed else str(rep.failure))]
    if not rep.passed:
        return out
    g = parametrix(f, m, N, sector, check=False)
    p = sharp_compose(shift_by_mu_power(f.truncate(min(f.N, N)) if f.N > N else f, m), g, N)
    xi = random_xi(rng, f.backend.n, count, 0.5, 3.0)
    mu = random_mu(rng, sector, count)
    one = np.broadcast_to(sx.eval_batch(sx.one(f.backend), xi[:1])[0], (count,) + f.backend.elem_shape)
    worst = float(np.abs(symbol_eval(p, xi, mu, [0]) - one).max())
    for j in range(1, p.N):
        worst = max(worst, float(np.abs(symbol_eval(p, xi, mu, [j])).max()))
    out.append(CheckResult("parametrix identity", worst <= 1e-8, worst, 1e-8))
    return out


def check_arg_independence(exps: list) -> CheckResult:
    """Relative spread of the coefficients across ray directions."""
    vals = [np.array([t.value for t in e.terms]) for e in exps]
    ref = vals[0]
    scale_ = max(float(np.abs(ref).max()), 1e-300)
    spread = max(float(np.abs(v - ref).max()) for v in vals) / scale_
    return CheckResult("coefficients independent of the ray", spread <= 1e-6, spread, 1e-6)


def check_schur(kg) -> list:
    res = schur_bound(kg)
    measured = discretized_opnorm(kg)
    return [CheckResult("Schur dominance", measured <= res.bound, measured, res.bound,
                        f"alpha={res.alpha!r} beta={res.beta!r}")]
