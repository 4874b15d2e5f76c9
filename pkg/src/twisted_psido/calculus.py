"""
Graded symbol calculus.

A symbol is a finite ladder of homogeneous components ``f_m, f_{m-1}, ...``
with values in a backend algebra.  Parametric symbols additionally depend on
``mu`` and are jointly homogeneous in ``(xi, mu)``.  This module provides the
twisted composition and adjoint expansions, the ellipticity-with-parameter
check, the parametrix recursion and resolvent powers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import symexpr as sx
from .algebra import AlgebraBackend, left_matrix
from .symexpr import Expr, TwistMatrix, multi_indices


class DegreeLadderError(ValueError):
    """Raised when a component does not carry its ladder degree."""


class EllipticityError(ValueError):
    """Raised when ``f_m(xi) - mu^m`` fails to be invertible on the sector.

    Attributes
    ----------
    report : EllipticityReport
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# sectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sector:
    """Open cone ``{mu : a < arg mu < b}`` sampled on ``r_min <= |mu| <= r_max``.

    The angle interval must lie in ``(-pi, pi)`` so that the principal
    branch of ``mu^d`` is holomorphic on the sector.
    """

    angle_min: float
    angle_max: float
    r_min: float = 1.0
    r_max: float = 100.0

    def __post_init__(self):
        a, b = self.angle_min, self.angle_max
        if not (-math.pi < a < b < math.pi):
            raise ValueError(f"sector angles ({a}, {b}) must satisfy -pi < a < b < pi "
                             "(the branch cut on the negative axis is excluded)")
        if not (0 < self.r_min <= self.r_max):
            raise ValueError("sector radii must satisfy 0 < r_min <= r_max")

    def contains(self, mu) -> bool:
        mu = complex(mu)
        return mu != 0 and self.angle_min < math.atan2(mu.imag, mu.real) < self.angle_max

    def angles(self, count: int) -> np.ndarray:
        """``count`` interior directions, evenly spaced."""
        a, b = self.angle_min, self.angle_max
        return a + (b - a) * (np.arange(count) + 1) / (count + 1)

    def units(self, count: int) -> np.ndarray:
        return np.exp(1j * self.angles(count))

    def radii(self, count: int) -> np.ndarray:
        if count == 1:
            return np.array([self.r_min])
        return np.geomspace(self.r_min, self.r_max, count)

    def samples(self, nrays: int = 5, nradii: int = 6) -> np.ndarray:
        """Grid of sample points, rays outer, radii inner."""
        return (self.units(nrays)[:, None] * self.radii(nradii)[None, :]).ravel()

    def to_dict(self) -> dict:
        return {"angles": [self.angle_min, self.angle_max], "radii": [self.r_min, self.r_max]}


UPPER_HALF = Sector(math.pi / 4, 3 * math.pi / 4)


# ---------------------------------------------------------------------------
# symbols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HomComponent:
    """Homogeneous component of a symbol.

    Parameters
    ----------
    degree : float
        Joint ``(xi, mu)`` homogeneity degree.
    expr : Expr
        Formula of the component.  For cutoff components it is only required
        to be homogeneous for ``|xi| >= 1``.
    is_global : bool
        True when the formula is homogeneous (and evaluable) on all of
        ``xi != 0`` and is used everywhere.
    interior : {"zero", "formula"}
        Extension inside the unit ball for cutoff components: a sharp cutoff
        or the formula itself.  Ignored for global components.
    """

    degree: float
    expr: Expr
    is_global: bool = True
    interior: str = "zero"

    def __post_init__(self):
        if self.interior not in ("zero", "formula"):
            raise ValueError("interior must be 'zero' or 'formula'")

    @property
    def backend(self) -> AlgebraBackend:
        return self.expr.backend

    def is_zero(self) -> bool:
        return self.expr.is_zero()

    def uses_formula_at(self, r) -> np.ndarray:
        """Mask of radii where the formula applies."""
        r = np.asarray(r)
        if self.is_global or self.interior == "formula":
            return np.ones(r.shape, dtype=bool)
        return r >= 1.0


@dataclass(frozen=True)
class PolyhomSymbol:
    """Classical polyhomogeneous symbol truncated to ``N`` components."""

    order: float
    components: tuple
    twist: TwistMatrix
    backend: AlgebraBackend

    @property
    def N(self) -> int:
        return len(self.components)

    @property
    def is_param(self) -> bool:
        return False

    @property
    def weight(self) -> float:
        return 0.0

    def component(self, j: int) -> HomComponent:
        if 0 <= j < self.N:
            return self.components[j]
        return HomComponent(self.order - j, sx.zero(self.backend))

    def exprs(self) -> list:
        return [c.expr for c in self.components]

    def with_twist(self, B: TwistMatrix) -> "PolyhomSymbol":
        return replace(self, twist=B)

    def truncate(self, N: int):
        return replace(self, components=tuple(self.component(j) for j in range(N)))


@dataclass(frozen=True)
class ParamSymbol(PolyhomSymbol):
    """Weakly parametric symbol; ``d`` is the mu-weight."""

    d: float = 0.0

    @property
    def is_param(self) -> bool:
        return True

    @property
    def weight(self) -> float:
        return self.d


def _sphere_points(n: int, count: int = 8) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    import itertools
    pts = np.array([p for p in itertools.product((-1.0, 0.0, 1.0), repeat=n) if any(p)])
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _homogeneity_defect(e: Expr, d: float, mu_unit=1j, min_radius=1.0) -> float:
    """Largest relative scaling defect on sample points with ``|xi| >= min_radius``."""
    bk = e.backend
    pts = _sphere_points(bk.n, 6)
    worst = 0.0
    for r in (1.0, 1.7):
        xi = pts * r * max(min_radius, 1.0)
        mu = np.full(len(xi), mu_unit * 1.3)
        base = sx.eval_batch(e, xi, mu)
        for s in (2.0, 3.5):
            val = sx.eval_batch(e, xi * s, mu * s)
            diff = np.abs(val - s ** d * base).max()
            scale = max(np.abs(base).max() * s ** d, 1e-300)
            worst = max(worst, diff / scale)
    return worst


def _split_by_degree(e: Expr, m: float) -> list:
    """Split a sum into ladder components ``m, m-1, ...`` by degree tags."""
    terms = e.args if e.kind == "sum" else (e,)
    buckets: dict = {}
    for t in terms:
        if t.degree is None:
            raise DegreeLadderError(f"term {sx.print_expr(t)} is not homogeneous; "
                                    "pass the ladder of components explicitly")
        j = m - t.degree
        jr = int(round(j))
        if abs(j - jr) > 1e-12 or jr < 0:
            raise DegreeLadderError(f"term {sx.print_expr(t)} of degree {t.degree} "
                                    f"is not on the ladder {m}, {m - 1}, ...")
        buckets.setdefault(jr, []).append(t)
    size = max(buckets) + 1 if buckets else 1
    return [sx.add(*buckets[j]) if j in buckets else sx.zero(e.backend) for j in range(size)]


def make_symbol(components, m: float, N: int | None = None, B: TwistMatrix | None = None, *,
                cutoff=False, interior: str = "zero", d: float | None = None,
                check: bool = True, mu_unit: complex = 1j):
    """Build and validate a graded symbol.

    Parameters
    ----------
    components : Expr or sequence of (Expr | HomComponent | None)
        Either the ladder ``f_m, f_{m-1}, ...`` or a single expression which
        is split by the structural degree of its summands.  ``None`` stands
        for a zero component.
    m : float
        Order of the symbol.
    N : int, optional
        Truncation; missing rungs are filled with zeros.
    B : TwistMatrix, optional
        Defaults to the zero twist.
    cutoff : bool or sequence of bool
        Mark components as cutoff-at-the-unit-ball instead of global.
    interior : {"zero", "formula"}
        Interior extension of cutoff components.
    d : float, optional
        mu-weight; giving it (or any mu-dependent component) yields a
        :class:`ParamSymbol`.
    check : bool
        Spot-check homogeneity of components without a structural tag.

    Returns
    -------
    PolyhomSymbol or ParamSymbol
    """
    if isinstance(components, Expr):
        comps = _split_by_degree(components, m)
    else:
        comps = list(components)
    if not comps:
        raise DegreeLadderError("a symbol needs at least one component")
    bk = None
    for c in comps:
        if c is not None:
            bk = c.backend
            break
    if bk is None:
        raise DegreeLadderError("cannot infer the backend from all-None components")
    if N is None:
        N = len(comps)
    if len(comps) > N:
        extra = [c for c in comps[N:] if c is not None and not (
            c.is_zero() if isinstance(c, (Expr, HomComponent)) else False)]
        if extra:
            raise DegreeLadderError(f"{len(comps)} components given but truncation N={N}")
        comps = comps[:N]
    comps = comps + [None] * (N - len(comps))
    if B is None:
        B = TwistMatrix.zeros(bk.n)
    if B.n != bk.n:
        raise ValueError(f"twist is {B.n}x{B.n} but the backend has n={bk.n}")
    cut = list(cutoff) if isinstance(cutoff, (list, tuple)) else [bool(cutoff)] * N
    cut = cut + [False] * (N - len(cut))
    out = []
    for j, c in enumerate(comps):
        deg = m - j
        if c is None:
            out.append(HomComponent(deg, sx.zero(bk)))
            continue
        if isinstance(c, HomComponent):
            if abs(c.degree - deg) > 1e-12:
                raise DegreeLadderError(f"component {j} has degree {c.degree}, expected {deg}")
            e = c.expr
            hc = c
        else:
            e = c
            hc = None
        if e.backend != bk:
            raise ValueError(f"backend mismatch in component {j}")
        if e.is_zero():
            out.append(HomComponent(deg, e))
            continue
        if e.degree is not None and abs(e.degree - deg) > 1e-12:
            raise DegreeLadderError(f"component {j} = {sx.print_expr(e)} has degree {e.degree}, "
                                    f"expected {deg}")
        if hc is None:
            is_global = (e.degree is not None) and not cut[j]
            hc = HomComponent(deg, e, is_global, interior)
        if hc.is_global and e.degree is None:
            raise DegreeLadderError(f"global component {j} has no structural degree")
        if check and e.degree is None:
            defect = _homogeneity_defect(e, deg, mu_unit)
            if defect > 1e-8:
                raise DegreeLadderError(f"component {j} is not homogeneous of degree {deg} "
                                        f"for |xi| >= 1 (relative defect {defect:.2e})")
        out.append(hc)
    has_mu = any(c.expr.has_mu for c in out)
    if has_mu or d is not None:
        return ParamSymbol(float(m), tuple(out), B, bk, d=float(d if d is not None else 0.0))
    return PolyhomSymbol(float(m), tuple(out), B, bk)


def shift_by_mu_power(f: PolyhomSymbol, m: int) -> ParamSymbol:
    """The parametric symbol ``f - mu^m`` (top component shifted)."""
    if f.is_param:
        raise ValueError("expected a classical symbol")
    if abs(f.order - m) > 1e-12:
        raise ValueError(f"symbol order {f.order} differs from m={m}")
    bk = f.backend
    top = f.components[0]
    new_top = HomComponent(top.degree, sx.sub(top.expr, sx.mu_pow(bk, m)), top.is_global, top.interior)
    return ParamSymbol(f.order, (new_top,) + f.components[1:], f.twist, bk, d=float(m))


def symbol_eval(f: PolyhomSymbol, xi, mu=None, components=None) -> np.ndarray:
    """Batched sum of (selected) components, honouring cutoff interiors."""
    bk = f.backend
    xi = np.asarray(xi, dtype=float).reshape(-1, bk.n)
    r = np.linalg.norm(xi, axis=1)
    total = np.zeros((len(xi),) + bk.elem_shape, dtype=complex)
    idx = range(f.N) if components is None else components
    for j in idx:
        c = f.components[j]
        if c.is_zero():
            continue
        mask = c.uses_formula_at(r)
        if not mask.any():
            continue
        sel = np.flatnonzero(mask)
        mu_sel = None if mu is None else np.broadcast_to(np.asarray(mu, dtype=complex), (len(xi),))[sel]
        total[sel] += sx.eval_batch(c.expr, xi[sel], mu_sel)
    return total


# ---------------------------------------------------------------------------
# twisted derivatives of components
# ---------------------------------------------------------------------------

def twisted_component(g_exprs: Sequence[Expr], alpha: Sequence[int], j: int, B: TwistMatrix) -> Expr:
    """Degree ``m' - j`` part of the twisted derivative ``g^{B, alpha}``.

    ``sum_k sum_{beta+gamma=alpha, |gamma|=k} binom i^|beta| delta^beta d_B^gamma g_{m'-j+k}``
    with ``k`` in ``0..j`` if ``j < |alpha|`` and ``0..|alpha|`` otherwise.
    """
    alpha = tuple(int(a) for a in alpha)
    bk = g_exprs[0].backend
    size = sum(alpha)
    kmax = j if j < size else size
    terms = []
    for k in range(kmax + 1):
        idx = j - k
        if idx >= len(g_exprs):
            continue
        g = g_exprs[idx]
        if g.is_zero():
            continue
        for gamma in multi_indices(len(alpha), k):
            if any(gm > a for gm, a in zip(gamma, alpha)):
                continue
            beta = tuple(a - gm for a, gm in zip(alpha, gamma))
            t = sx.expr_delta(sx.expr_dB(g, gamma, B), beta)
            if t.is_zero():
                continue
            c = math.prod(math.comb(a, b) for a, b in zip(alpha, beta)) * 1j ** sum(beta)
            terms.append(sx.scale(c, t))
    return sx.add(*terms) if terms else sx.zero(bk)


def _alpha_factorial(alpha) -> int:
    return math.prod(math.factorial(a) for a in alpha)


def _combine_flags(comps: Sequence[HomComponent]):
    """Global iff all contributing components are global."""
    if all(c.is_global for c in comps):
        return True, "zero"
    interior = "zero" if any((not c.is_global) and c.interior == "zero" for c in comps) else "formula"
    return False, interior


# ---------------------------------------------------------------------------
# composition and adjoint
# ---------------------------------------------------------------------------

def sharp_compose(f: PolyhomSymbol, g: PolyhomSymbol, N: int | None = None):
    """Twisted composition ``f # g`` truncated to ``N`` components.

    Component ``j`` is ``sum_{k+l+|alpha|=j} (-i)^|alpha|/alpha! d^alpha f_{m-k} g^{B,alpha}_{m'-l}``.
    A classical operand combined with a parametric one is treated as
    parametric of weight 0.
    """
    if f.backend != g.backend:
        raise ValueError(f"backend mismatch: {f.backend.describe()} vs {g.backend.describe()}")
    if f.twist != g.twist:
        raise ValueError("twist mismatch between the operands")
    if N is None:
        N = min(f.N, g.N)
    bk, B, n = f.backend, f.twist, f.backend.n
    fe, ge = f.exprs(), g.exprs()
    comps = []
    for j in range(N):
        terms = []
        used = []
        for size in range(j + 1):
            for alpha in multi_indices(n, size):
                for k in range(j - size + 1):
                    l = j - size - k
                    if k >= f.N or l >= g.N:
                        continue
                    fk = fe[k]
                    if fk.is_zero():
                        continue
                    df = sx.expr_dxi_multi(fk, alpha)
                    if df.is_zero():
                        continue
                    tg = twisted_component(ge, alpha, l, B)
                    if tg.is_zero():
                        continue
                    c = (-1j) ** size / _alpha_factorial(alpha)
                    terms.append(sx.scale(c, sx.mul(df, tg)))
                    used.append(f.components[k])
                    used.extend(g.components[i] for i in range(min(l, g.N - 1) + 1))
        e = sx.add(*terms) if terms else sx.zero(bk)
        is_global, interior = _combine_flags(used) if used else (True, "zero")
        comps.append(HomComponent(f.order + g.order - j, e, is_global, interior))
    order = f.order + g.order
    if f.is_param or g.is_param:
        return ParamSymbol(order, tuple(comps), B, bk, d=f.weight + g.weight)
    return PolyhomSymbol(order, tuple(comps), B, bk)


def adjoint_expand(f: PolyhomSymbol, N: int | None = None) -> PolyhomSymbol:
    """Adjoint expansion ``sum_alpha (1/alpha!) delta^alpha d^alpha f(xi)^*``."""
    if f.is_param:
        raise ValueError("adjoint_expand expects a classical (mu-free) symbol")
    if N is None:
        N = f.N
    bk, n = f.backend, f.backend.n
    adj = [sx.expr_adjoint(e) for e in f.exprs()]
    comps = []
    for j in range(N):
        terms = []
        used = []
        for size in range(j + 1):
            k = j - size
            if k >= f.N or adj[k].is_zero():
                continue
            for alpha in multi_indices(n, size):
                t = sx.expr_delta(sx.expr_dxi_multi(adj[k], alpha), alpha)
                if t.is_zero():
                    continue
                terms.append(sx.scale(1.0 / _alpha_factorial(alpha), t))
                used.append(f.components[k])
        e = sx.add(*terms) if terms else sx.zero(bk)
        is_global, interior = _combine_flags(used) if used else (True, "zero")
        comps.append(HomComponent(f.order - j, e, is_global, interior))
    return PolyhomSymbol(f.order, tuple(comps), f.twist, bk)


# ---------------------------------------------------------------------------
# ellipticity and parametrix
# ---------------------------------------------------------------------------

@dataclass
class EllipticityReport:
    """Outcome of :func:`ellipticity_check`."""

    passed: bool
    worst_condition: float
    worst_residual: float
    samples: int
    failure: dict | None = None
    spectral_margin: float = math.inf

    def to_dict(self) -> dict:
        return {"passed": self.passed, "worst_condition": self.worst_condition,
                "worst_residual": self.worst_residual, "samples": self.samples,
                "spectral_margin": self.spectral_margin, "failure": self.failure}


def _spectrum(bk: AlgebraBackend, payload) -> np.ndarray:
    if bk.kind == "scalar":
        return np.atleast_1d(payload)
    if bk.kind == "matrix":
        return np.linalg.eigvals(payload)
    return np.linalg.eigvals(left_matrix(bk, payload))


def _angle_distance(phi, sector: Sector) -> float:
    """Signed distance of an angle to the open sector (negative inside)."""
    phi = math.remainder(phi, 2 * math.pi)
    a, b = sector.angle_min, sector.angle_max
    if a < phi < b:
        return -min(phi - a, b - phi)
    return min(abs(math.remainder(phi - a, 2 * math.pi)), abs(math.remainder(phi - b, 2 * math.pi)))


def ellipticity_check(f: PolyhomSymbol, m: int, sector: Sector, grid: tuple = (16, 5, 7)) -> EllipticityReport:
    """Check invertibility of ``f_m(xi) - mu^m`` for ``|xi| = 1``, ``mu`` in the sector.

    Parameters
    ----------
    grid : (n_sphere, n_rays, n_radii)
        Sample counts on the circle (n = 2), the sector rays and the radii
        (geometric in ``[r_min, r_max]``).

    Notes
    -----
    Besides the grid inversions, the eigenvalues ``lam`` of ``f_m(omega)``
    are tested directly: the check fails if some ``m``-th root of ``lam``
    lies in the sector, which catches failures between grid points.
    """
    m = int(m)
    if m < 1:
        raise ValueError("m must be a positive integer")
    bk = f.backend
    top = f.components[0].expr
    pts = _sphere_points(bk.n, grid[0])
    mus = sector.samples(grid[1], grid[2])
    worst_c, worst_r = 1.0, 0.0
    failure = None
    fm = sx.eval_batch(top, pts)
    ident = np.broadcast_to(sx.eval_batch(sx.one(bk), pts[:1])[0], fm.shape[1:])
    # spectral test
    margin = math.inf
    for i, w in enumerate(pts):
        for lam in _spectrum(bk, fm[i]):
            if lam == 0:
                continue
            base = np.angle(lam) / m
            for p in range(m):
                phi = base + 2 * math.pi * p / m
                dist = _angle_distance(phi, sector)
                margin = min(margin, dist)
                if dist < 0 and failure is None:
                    mu_bad = abs(lam) ** (1.0 / m) * np.exp(1j * phi)
                    failure = {"xi": w.tolist(), "mu": [mu_bad.real, mu_bad.imag],
                               "reason": f"eigenvalue {complex(lam)} of f_m(xi) equals mu^m"}
    for i, w in enumerate(pts):
        for mu in mus:
            a = fm[i] - mu ** m * ident
            if bk.kind == "scalar":
                cond = 1.0 if a != 0 else math.inf
                res = 0.0
            else:
                A = a if bk.kind == "matrix" else left_matrix(bk, a)
                cond = float(np.linalg.cond(A))
                try:
                    x = np.linalg.solve(A, np.eye(A.shape[0]))
                    res = float(np.abs(A @ x - np.eye(A.shape[0])).max())
                except np.linalg.LinAlgError:
                    res = math.inf
            if not np.isfinite(cond) or res > 1e-10:
                if failure is None:
                    failure = {"xi": w.tolist(), "mu": [mu.real, mu.imag],
                               "reason": f"inversion failed (condition {cond:.3e}, residual {res:.3e})"}
            worst_c = max(worst_c, cond)
            worst_r = max(worst_r, res)
    return EllipticityReport(failure is None, worst_c, worst_r, len(pts) * len(mus), failure, margin)


def is_polynomial(e: Expr) -> bool:
    """True if ``e`` has no Inv nodes and only even nonnegative ``|xi|`` powers."""
    stack, seen = [e], set()
    while stack:
        x = stack.pop()
        if id(x) in seen:
            continue
        seen.add(id(x))
        if x.kind == "inv":
            return False
        if x.kind == "absxi":
            s = x.args[0]
            if s < 0 or s != int(s) or int(s) % 2:
                return False
        stack.extend(x.children)
    return True


def parametrix(f: PolyhomSymbol, m: int, N: int | None = None, sector: Sector | None = None,
               check: bool = True) -> ParamSymbol:
    """Parametrix of ``f - mu^m``.

    ``g_{-m} = (f_m - mu^m)^{-1}`` and
    ``g_{-m-j} = -sum_{k+l+|alpha|=j, l<j} (-i)^|alpha|/alpha! g_{-m} d^alpha f_{m-k} g^{B,alpha}_{-m-l}``.

    Raises
    ------
    EllipticityError
        If ``check`` is set and the ellipticity check fails on ``sector``.
    """
    if f.is_param:
        raise ValueError("parametrix expects a classical symbol")
    m = int(m)
    if m < 1 or abs(f.order - m) > 1e-12:
        raise ValueError(f"need a positive integer m equal to the order, got m={m}, order={f.order}")
    if N is None:
        N = f.N
    if check:
        if sector is None:
            raise ValueError("an ellipticity check needs a sector")
        rep = ellipticity_check(f, m, sector)
        if not rep.passed:
            raise EllipticityError(f"f is not elliptic with parameter on the sector: {rep.failure}", rep)
    bk, B, n = f.backend, f.twist, f.backend.n
    fe = f.exprs()
    D = sx.sub(fe[0], sx.mu_pow(bk, m))
    R = sx.inv(D)
    g = [R]
    for j in range(1, N):
        terms = []
        for size in range(j + 1):
            for alpha in multi_indices(n, size):
                for k in range(j - size + 1):
                    l = j - size - k
                    if l >= j or k >= f.N or fe[k].is_zero():
                        continue
                    df = sx.expr_dxi_multi(fe[k], alpha)
                    if df.is_zero():
                        continue
                    tg = twisted_component(g, alpha, l, B)
                    if tg.is_zero():
                        continue
                    c = -((-1j) ** size) / _alpha_factorial(alpha)
                    terms.append(sx.scale(c, sx.mul(R, df, tg)))
        g.append(sx.add(*terms) if terms else sx.zero(bk))
    is_global = all(c.is_global and is_polynomial(c.expr) for c in f.components)
    comps = tuple(HomComponent(-m - j, e, is_global, "zero") for j, e in enumerate(g))
    return ParamSymbol(-float(m), comps, B, bk, d=-float(m))


def resolvent_power_symbol(g: ParamSymbol, k: int, N: int | None = None) -> ParamSymbol:
    """``g # ... # g`` (``k`` factors) at truncation ``N``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if N is None:
        N = g.N
    out = g.truncate(N) if N != g.N else g
    for _ in range(k - 1):
        out = sharp_compose(out, g, N)
    return out
