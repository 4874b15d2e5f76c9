"""
Dual trace of symbols and resolvent-trace asymptotics.

``Tr(f)(mu) = int psi(f(xi, mu)) dxi / (2 pi)^n`` is computed in polar form
(sphere rule times adaptive radial quadrature).  For the large-mu expansion
a globally homogeneous component contributes an exact power ``c mu^(d+n)``
by scaling.  A cutoff component is split into the unit ball, the annulus
``1 <= |xi| <= |mu|`` and the exterior ``|xi| >= |mu|``; the first two are
expanded with the large-mu Taylor coefficients ``q_nu`` and the remainder
``R_M`` is handled through its homogeneous extension, which produces the
power, log and constant coefficients.
"""
from __future__ import annotations

import cmath
import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import symexpr as sx
from .calculus import (HomComponent, PolyhomSymbol, Sector, make_symbol, parametrix, resolvent_power_symbol, sharp_compose)
from .quadrature import QuadratureSpec, integrate, sphere_rule

TAIL_TERMS = 12
TAIL_RTOL = 1e-15


class DivergenceError(ValueError):
    """Raised when a requested integral diverges (degree too large)."""


class TruncationError(ValueError):
    """Raised when the Taylor order M is too small for the remainder integral."""


def _fmt(x: float) -> str:
    return format(float(x) + 0.0, ".17g")


# ---------------------------------------------------------------------------
# polar integration helpers
# ---------------------------------------------------------------------------

def _radial_integrand(evaluate, n: int, quad: QuadratureSpec):
    """``r -> (2 pi)^-n r^(n-1) sum_w w psi(f(r w))`` for a batched evaluator."""
    omega, weights = sphere_rule(n, quad.circle_points)
    norm = (2 * np.pi) ** (-n)

    def F(r):
        r = np.asarray(r, dtype=float)
        xi = (r[:, None, None] * omega[None, :, :]).reshape(-1, n)
        vals = evaluate(xi, np.repeat(r, len(omega))).reshape(len(r), len(omega))
        return norm * r ** (n - 1) * (vals @ weights)

    return F


def _expr_evaluator(e: sx.Expr, mu, mask=None):
    def ev(xi, r):
        out = np.zeros(len(xi), dtype=complex)
        sel = np.ones(len(xi), dtype=bool) if mask is None else mask(r)
        if sel.any():
            out[sel] = sx.eval_trace(e, xi[sel], None if mu is None else np.full(sel.sum(), mu))
        return out
    return ev


def _integrate_radial(F, a, b, quad, breakpoints=(), atol=None):
    return integrate(F, a, b, rtol=quad.rtol, atol=quad.atol if atol is None else atol,
                     breakpoints=breakpoints, max_intervals=quad.max_intervals)[0]


def _degree_guard(d, n, what):
    if d is None or d >= -n:
        raise DivergenceError(f"{what}: degree {d} is not below -n = {-n}; the integral diverges")


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def trace_quadrature_oracle(s, mu, quad: QuadratureSpec | None = None, check_degree: bool = True) -> complex:
    """Direct quadrature of ``int psi(s(xi, mu)) dxi / (2 pi)^n``.

    Parameters
    ----------
    s : PolyhomSymbol, ParamSymbol, HomComponent or Expr
        Cutoff components with a zero interior are integrated over
        ``|xi| >= 1`` only.
    mu : complex
    check_degree : bool
        Reject symbols whose nonzero components are not integrable at
        infinity.  Bare expressions are never checked.
    """
    quad = quad or QuadratureSpec()
    if isinstance(s, sx.Expr):
        comps = [HomComponent(s.degree if s.degree is not None else -np.inf, s, True)]
        check_degree = False
    elif isinstance(s, HomComponent):
        comps = [s]
    else:
        comps = list(s.components)
    comps = [c for c in comps if not c.is_zero()]
    if not comps:
        return 0j
    n = comps[0].backend.n
    if check_degree:
        for c in comps:
            _degree_guard(c.degree, n, "trace oracle")
    amu = abs(mu) if mu is not None else 1.0

    def ev(xi, r):
        out = np.zeros(len(xi), dtype=complex)
        for c in comps:
            sel = c.uses_formula_at(r)
            if sel.any():
                m = None if mu is None else np.full(sel.sum(), complex(mu))
                out[sel] += sx.eval_trace(c.expr, xi[sel], m)
        return out

    F = _radial_integrand(ev, n, quad)
    inner = _integrate_radial(F, 0.0, 1.0, quad)
    outer = _integrate_radial(F, 1.0, np.inf, quad, breakpoints=(amu,) if amu > 1 else ())
    return inner + outer


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

def _upow(u: complex, p: float) -> complex:
    return complex(u) ** p if p != 0 else 1 + 0j


def coeff_power(comp: HomComponent, u: complex, n: int | None = None,
                quad: QuadratureSpec | None = None) -> tuple:
    """Coefficient of ``mu^(d+n)`` from the exterior/scaling integral.

    Global components integrate over all of ``R^n`` (the result is then the
    exact trace ``c mu^(d+n)``); cutoff components over ``|xi| >= 1``.

    Returns
    -------
    (exponent, c) : (float, complex)
    """
    quad = quad or QuadratureSpec()
    n = comp.backend.n if n is None else n
    d = comp.degree
    if comp.is_zero():
        return d + n, 0j
    _degree_guard(d, n, "coeff_power")
    u = complex(u)
    ev = _expr_evaluator(comp.expr, u)
    F = _radial_integrand(ev, n, quad)
    val = _integrate_radial(F, 1.0, np.inf, quad)
    if comp.is_global:
        val += _integrate_radial(F, 0.0, 1.0, quad)
    return d + n, _upow(u, -(d + n)) * val


@dataclass
class CoefficientPart:
    """One contribution to a coefficient, with its origin."""

    kind: str
    exponent: float
    value: complex
    source: str


@dataclass
class LogConstResult:
    """Output of :func:`coeff_log_const`.

    ``power`` is the full coefficient of ``mu^(d+n)`` (None if the exterior
    integral diverges), ``logs`` and ``consts`` map mu-exponents to
    coefficients of ``mu^e log mu`` and ``mu^e``.
    """

    degree: float
    exponent: float
    power: complex | None
    logs: dict
    consts: dict
    parts: list
    M: int

    def log_coefficient(self, exponent=None) -> complex:
        if exponent is None:
            return sum(self.logs.values(), 0j)
        return self.logs.get(float(exponent), 0j)


def minimal_order(d: float, lead: float, n: int) -> int:
    """Smallest M with ``s_M = d - (lead - M) > -n``."""
    return max(1, int(math.floor(lead - d - n + 1e-9)) + 1)


def coeff_log_const(comp: HomComponent, M: int | None = None, u: complex = 1j,
                    n: int | None = None, quad: QuadratureSpec | None = None) -> LogConstResult:
    """Power, log and constant coefficients of a cutoff component.

    Parameters
    ----------
    comp : HomComponent
        Homogeneous of degree ``d`` for ``|xi| >= 1``.
    M : int, optional
        Number of Taylor steps ``q_0 .. q_{M-1}``; must satisfy
        ``d - (lead - M) > -n``.  Defaults to the smallest admissible value.
    u : complex
        Unit direction in the sector used for the scaling integrals.
    """
    quad = quad or QuadratureSpec()
    bk = comp.backend
    n = bk.n if n is None else n
    d = comp.degree
    u = complex(u)
    argu = cmath.phase(u)
    e = comp.expr
    P = d + n
    if comp.is_zero():
        return LogConstResult(d, P, 0j, {}, {}, [], M or 0)
    lead, _ = sx.mu_series(e, 1)
    if M is None:
        M = minimal_order(d, lead, n)
    sM = d - (lead - M)
    if sM <= -n:
        raise TruncationError(f"M={M} too small: need d - (lead - M) > -n, "
                              f"i.e. M >= {minimal_order(d, lead, n)}")
    lead, q = sx.mu_series(e, M + TAIL_TERMS)
    interior = comp.is_global or comp.interior == "formula"
    omega, w = sphere_rule(n, quad.circle_points)
    norm = (2 * np.pi) ** (-n)
    Q = np.array([sx.eval_trace(qv, omega) if not qv.is_zero() else np.zeros(len(omega), complex)
                  for qv in q])
    exps = np.array([lead - nu for nu in range(len(q))])
    parts = []
    for nu in range(M):
        if q[nu].is_zero():
            continue
        ev = float(exps[nu])
        sv = d - ev
        if interior:
            if sv <= -n:
                raise DivergenceError(f"q_{nu} of degree {sv} is not integrable on the unit ball")
            F = _radial_integrand(_expr_evaluator(q[nu], None), n, quad)
            parts.append(CoefficientPart("constant", ev, _integrate_radial(F, 0.0, 1.0, quad),
                                         f"unit ball, q_{nu}"))
        c = norm * complex(Q[nu] @ w)
        if abs(sv + n) < 1e-12:
            parts.append(CoefficientPart("log", ev, c, f"annulus, q_{nu} (log |mu|)"))
            parts.append(CoefficientPart("power", ev, -1j * argu * c, f"annulus, q_{nu} (log branch)"))
        else:
            parts.append(CoefficientPart("constant", ev, -c / (sv + n), f"annulus lower limit, q_{nu}"))
            parts.append(CoefficientPart("power", P, c * _upow(u, -(sv + n)) / (sv + n),
                                         f"annulus upper limit, q_{nu}"))
    exterior_ok = P < 0
    if exterior_ok:
        F = _radial_integrand(_expr_evaluator(e, u), n, quad)
        val = _integrate_radial(F, 1.0, np.inf, quad)
        parts.append(CoefficientPart("power", P, _upow(u, -P) * val, "exterior |xi| >= |mu| (scaling)"))
    if e.has_mu:
        val = _remainder_integral(e, d, n, u, M, exps, Q, w, quad)
        parts.append(CoefficientPart("power", P, _upow(u, -P) * val, f"homogeneous remainder R_{M}"))
    logs: dict = {}
    consts: dict = {}
    power = 0j
    for p in parts:
        key = float(p.exponent)
        if p.kind == "log":
            logs[key] = logs.get(key, 0j) + p.value
        elif p.kind == "constant":
            consts[key] = consts.get(key, 0j) + p.value
        elif abs(p.exponent - P) < 1e-12:
            power += p.value
        else:
            consts[key] = consts.get(key, 0j) + p.value
    return LogConstResult(d, P, power if exterior_ok else None, logs, consts, parts, M)


def _remainder_integral(e, d, n, u, M, exps, Q, w, quad):
    """``(2 pi)^-n int_1^inf rho^(-n-d-1) sum_w psi(R_M(w, u rho)) d rho``."""
    omega, _ = sphere_rule(n, quad.circle_points)
    norm = (2 * np.pi) ** (-n)
    head = slice(0, M)
    tail = slice(M, len(exps))
    Qw_head = Q[head] @ w
    Qw_tail = Q[tail] @ w

    def direct(rho):
        rho = np.asarray(rho, dtype=float)
        mus = u * rho
        xi = np.tile(omega, (len(rho), 1))
        vals = sx.eval_trace(e, xi, np.repeat(mus, len(omega))).reshape(len(rho), len(omega)) @ w
        series = (mus[:, None] ** exps[None, head]) @ Qw_head
        return norm * rho ** (-n - d - 1) * (vals - series)

    # switch to the tail series once its last retained term is negligible
    Qt = np.abs(Q[tail]).max(axis=1) if Q[tail].size else np.zeros(0)
    rho_sw = None
    if Qt.size and Qt.any():
        last = np.flatnonzero(Qt)[-1]
        first = np.flatnonzero(Qt)[0]
        for kexp in range(0, 48):
            rho = 2.0 ** kexp
            big = Qt[first] * rho ** exps[M + first]
            small = Qt[last] * rho ** exps[M + last]
            if last == first or small <= TAIL_RTOL * big:
                rho_sw = rho
                break
    scale = float(np.abs(Qw_head).sum() + np.abs(Qw_tail).sum()) * norm
    atol = max(quad.atol, 1e-3 * quad.rtol * scale)
    if rho_sw is None:
        return _integrate_radial(direct, 1.0, np.inf, quad, atol=atol)
    val = _integrate_radial(direct, 1.0, rho_sw, quad, atol=atol) if rho_sw > 1 else 0j
    # int_{rho_sw}^inf rho^p d rho with p = -n - d - 1 + e_nu < -1
    p = -n - d - 1 + exps[tail]
    tail_terms = norm * Qw_tail * u ** exps[tail] * (-(rho_sw ** (p + 1)) / (p + 1))
    return val + complex(math.fsum(tail_terms.real), math.fsum(tail_terms.imag))


# ---------------------------------------------------------------------------
# expansions
# ---------------------------------------------------------------------------

@dataclass
class TraceTerm:
    """A coefficient of the expansion in the variable mu.

    ``kind`` is "power", "log" or "constant"; ``index`` is the component
    index ``j`` for power terms and the ladder index ``l`` (exponent
    ``-m(k+l)``) for log and constant terms.
    """

    kind: str
    index: float
    exponent: float
    value: complex
    method: str
    provenance: list = field(default_factory=list)


@dataclass
class TraceExpansion:
    """Coefficient table of ``Tr(A (P - lambda)^-k)`` as ``mu -> inf`` in the sector."""

    terms: list
    n: int
    m: int
    k: int
    J: int
    order_a: float
    sector: Sector
    quad: QuadratureSpec
    unit: complex

    # -- views -------------------------------------------------------------
    def power_terms(self):
        return [(t.exponent, t.value) for t in self.terms if t.kind == "power"]

    def log_terms(self):
        return [(t.index, t.value) for t in self.terms if t.kind == "log"]

    def constant_terms(self):
        return [(t.index, t.value) for t in self.terms if t.kind == "constant"]

    def collected(self) -> list:
        """``[(exponent, c, c_log)]`` summed per exponent, decreasing exponent."""
        acc: dict = {}
        for t in self.terms:
            key = round(float(t.exponent), 12)
            c, cl = acc.get(key, (0j, 0j))
            if t.kind == "log":
                cl += t.value
            else:
                c += t.value
            acc[key] = (c, cl)
        return [(e, c, cl) for e, (c, cl) in sorted(acc.items(), key=lambda kv: -kv[0])]

    def nonzero(self, atol: float = 0.0) -> list:
        return [x for x in self.collected() if abs(x[1]) > atol or abs(x[2]) > atol]

    def evaluate(self, mu, upto: int | None = None) -> np.ndarray:
        """Partial sum over the first ``upto`` nonzero collected exponents."""
        mu = np.asarray(mu, dtype=complex)
        out = np.zeros(mu.shape, dtype=complex)
        for e, c, cl in self.nonzero()[:upto]:
            out = out + (c + cl * np.log(mu)) * mu ** e
        return out

    def lambda_terms(self, samples: int = 5) -> list:
        """Coefficients in the variable ``-lambda`` with ``lambda = mu^m``.

        Each ``c mu^e`` becomes ``c kappa_e (-lambda)^(e/m)`` and each
        ``c' mu^e log mu`` contributes ``c' kappa_e / m`` to the log term and
        ``c' kappa_e ell`` to the power term, where ``kappa_e`` and ``ell``
        are constants on the sector (checked on ``samples`` rays).
        """
        m = self.m
        us = self.sector.units(samples)
        ell_all = np.log(us) - np.log(-(us ** m)) / m
        if np.ptp(ell_all.real) + np.ptp(ell_all.imag) > 1e-12:
            raise ValueError("the sector crosses the branch cut of log(-lambda)")
        ell = complex(ell_all[0])
        out = []
        for t in self.terms:
            e = t.exponent
            kap_all = us ** e / (-(us ** m)) ** (e / m)
            if np.abs(kap_all - kap_all[0]).max() > 1e-12 * max(1.0, abs(kap_all[0])):
                raise ValueError("the sector crosses the branch cut of (-lambda)^(e/m)")
            kap = complex(kap_all[0])
            if t.kind == "log":
                out.append(TraceTerm("log", t.index, e / m, t.value * kap / m, t.method,
                                     t.provenance + ["log mu = log(-lambda)/m + const"]))
                out.append(TraceTerm("constant", t.index, e / m, t.value * kap * ell, t.method,
                                     t.provenance + ["branch constant of log mu"]))
            else:
                out.append(TraceTerm(t.kind, t.index, e / m, t.value * kap, t.method, list(t.provenance)))
        return out

    # -- serialization -----------------------------------------------------
    def rows(self, variable: str = "mu") -> list:
        terms = self.terms if variable == "mu" else self.lambda_terms()
        return [{"kind": t.kind, "index": t.index, "exponent": t.exponent, "real": t.value.real,
                 "imag": t.value.imag, "provenance": "; ".join(t.provenance)} for t in terms]

    def to_csv(self, variable: str = "mu") -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["kind", "index", "exponent", "real", "imag", "provenance"])
        for r in self.rows(variable):
            idx = r["index"]
            idx = str(int(idx)) if float(idx).is_integer() else _fmt(idx)
            wr.writerow([r["kind"], idx, _fmt(r["exponent"]), _fmt(r["real"]), _fmt(r["imag"]),
                         r["provenance"]])
        return buf.getvalue()

    def to_json(self) -> dict:
        def conv(rows):
            return [{**r, "index": float(r["index"]), "exponent": float(r["exponent"])} for r in rows]

        return {"n": self.n, "m": self.m, "k": self.k, "J": self.J, "order_a": self.order_a,
                "sector": self.sector.to_dict(), "quadrature": self.quad.to_dict(),
                "unit": [self.unit.real, self.unit.imag],
                "mu": conv(self.rows("mu")), "lambda": conv(self.rows("lambda"))}


def _component_terms(j, comp, n, m, k, u, quad, e_cut=None):
    d = comp.degree
    if comp.is_global or comp.is_zero():
        if comp.is_zero():
            return [TraceTerm("power", j, d + n, 0j, "scaling", ["zero component"])]
        e, c = coeff_power(comp, u, n, quad)
        return [TraceTerm("power", j, e, c, "scaling", ["full-space integral, exact by scaling"])]
    lead, _ = sx.mu_series(comp.expr, 1)
    M = minimal_order(d, lead, n)
    if e_cut is not None and lead is not None:
        # keep every Taylor step whose exponent lies above the truncation level
        M = max(M, int(math.ceil(lead - e_cut - 1e-9)))
    res = coeff_log_const(comp, M, u, n, quad)
    out = []
    if res.power is None:
        raise DivergenceError(f"component {j} of degree {d} has a divergent exterior integral")
    src = [f"{p.source}: {_fmt(p.value.real)}{'+' if p.value.imag >= 0 else '-'}{_fmt(abs(p.value.imag))}i"
           for p in res.parts if p.kind == "power" and abs(p.exponent - res.exponent) < 1e-12]
    out.append(TraceTerm("power", j, res.exponent, res.power, "regions", src))
    for e, c in res.logs.items():
        out.append(TraceTerm("log", -e / m - k, e, c, "regions",
                             [p.source for p in res.parts if p.kind == "log" and p.exponent == e]))
    for e, c in res.consts.items():
        out.append(TraceTerm("constant", -e / m - k, e, c, "regions",
                             [p.source for p in res.parts if p.kind == "constant" and p.exponent == e]))
    return out


def trace_expansion_full(a: PolyhomSymbol | None, f: PolyhomSymbol, m: int, k: int, J: int,
                         sector: Sector, quad: QuadratureSpec | None = None,
                         threads: int = 1, unit: complex | None = None) -> TraceExpansion:
    """Asymptotic coefficients of ``Tr(A (P - lambda)^-k)``, ``lambda = mu^m``.

    Parameters
    ----------
    a : PolyhomSymbol or None
        Symbol of ``A`` (None means the identity).
    f : PolyhomSymbol
        Symbol of ``P``, elliptic with parameter on ``sector``.
    m, k, J : int
        Order of ``f``, resolvent power and truncation.
    threads : int
        Components are processed concurrently; assembly order is fixed.
    """
    quad = quad or QuadratureSpec()
    bk = f.backend
    n = bk.n
    if a is None:
        a = make_symbol([sx.one(bk)], 0.0, 1, f.twist)
    if a.backend != bk:
        raise ValueError("A and P live on different backends")
    if -k * m + a.order >= -n:
        raise ValueError(f"need -k m + ord(A) < -n, got {-k * m + a.order} >= {-n}")
    g = parametrix(f, m, J, sector)
    gk = resolvent_power_symbol(g, k, J)
    s = sharp_compose(a.with_twist(f.twist), gk, J)
    u = complex(unit) if unit is not None else complex(np.exp(1j * 0.5 * (sector.angle_min + sector.angle_max)))
    jobs = list(enumerate(s.components))
    # power terms reach down to s.order + n - (J - 1); log/constant terms stop there too
    e_cut = s.order + n - J

    def work(item):
        j, comp = item
        return _component_terms(j, comp, n, m, k, u, quad, e_cut)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, jobs))
    else:
        results = [work(x) for x in jobs]
    terms = [t for r in results for t in r]
    return TraceExpansion(terms, n, m, k, J, a.order, sector, quad, u)


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------

@dataclass
class FitReport:
    """Residual slopes of partial sums against oracle values."""

    mus: np.ndarray
    oracle: np.ndarray
    partial: np.ndarray          # (T+1, len(mus)), partial[t] uses t terms
    residual: np.ndarray
    slopes: list                 # per t: list of slopes, one per ray
    predicted: list              # per t: next exponent (or None)

    def deviation(self, t: int) -> float:
        if self.predicted[t] is None:
            return math.nan
        return max(abs(s - self.predicted[t]) for s in self.slopes[t])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        T = self.partial.shape[0]
        head = ["mu_real", "mu_imag", "oracle_real", "oracle_imag"]
        for t in range(T):
            head += [f"partial{t}_real", f"partial{t}_imag", f"residual{t}"]
        wr.writerow(head)
        for i, mu in enumerate(self.mus):
            row = [_fmt(mu.real), _fmt(mu.imag), _fmt(self.oracle[i].real), _fmt(self.oracle[i].imag)]
            for t in range(T):
                row += [_fmt(self.partial[t, i].real), _fmt(self.partial[t, i].imag),
                        _fmt(self.residual[t, i])]
            wr.writerow(row)
        return buf.getvalue()


def expansion_fit(e: TraceExpansion | None, oracle, mus, max_terms: int | None = None,
                  threads: int = 1) -> FitReport:
    """Compare partial sums of ``e`` against oracle values.

    Parameters
    ----------
    oracle : callable or array_like
        ``oracle(mu)`` or precomputed values at ``mus``.
    mus : array_like
        Sample points; slopes are fitted per ray (points sharing ``arg mu``)
        by least squares of ``log|residual|`` against ``log|mu|``.
    """
    mus = np.asarray(mus, dtype=complex).ravel()
    if callable(oracle):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                vals = np.array(list(ex.map(oracle, mus)), dtype=complex)
        else:
            vals = np.array([oracle(mu) for mu in mus], dtype=complex)
    else:
        vals = np.asarray(oracle, dtype=complex).ravel()
    groups = [] if e is None else e.nonzero()
    T = len(groups) if max_terms is None else min(max_terms, len(groups))
    partial = np.zeros((T + 1, len(mus)), dtype=complex)
    for t in range(1, T + 1):
        partial[t] = e.evaluate(mus, t)
    residual = np.abs(vals[None, :] - partial)
    rays = np.round(np.angle(mus), 12)
    slopes, predicted = [], []
    for t in range(T + 1):
        sl = []
        for ang in np.unique(rays):
            sel = rays == ang
            if sel.sum() < 2:
                continue
            x = np.log(np.abs(mus[sel]))
            y = np.log(np.maximum(residual[t, sel], 1e-300))
            sl.append(float(np.polyfit(x, y, 1)[0]))
        slopes.append(sl)
        predicted.append(groups[t][0] if t < len(groups) else None)
    return FitReport(mus, vals, partial, residual, slopes, predicted)
