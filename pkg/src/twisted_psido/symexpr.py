"""
Hash-consed expression DAG for algebra-valued functions of ``(xi, mu)``.

Node kinds::

    coef   Coef(a)            constant algebra element
    xi     XiMonomial(beta)   xi^beta (times the unit)
    absxi  AbsXiPower(s)      |xi|^s
    mu     MuPower(d)         mu^d, principal branch
    sum    Sum(children)
    prod   Prod(children)     noncommutative, written order preserved
    inv    Inv(child)

Nodes are interned, so two structurally equal nodes are the same Python
object and ``is`` / ``==`` coincide.  The canonical constructors
:func:`add`, :func:`mul` and :func:`inv` flatten, drop structural zeros and
unit factors, merge adjacent constants and collect central atoms (scalar
constants, xi monomials, |xi| and mu powers) at the front of a product.
Noncentral factors are never reordered.
"""
from __future__ import annotations

import itertools
import math
import threading
from functools import lru_cache
from typing import Sequence

import numpy as np

from .algebra import (AlgebraBackend, AlgebraElement, SingularElementError, identity,
                      payload_identity, payload_inverse, payload_mul, payload_scale,
                      payload_trace, scalar_element)

__all__ = [
    "Expr", "TwistMatrix", "UnexpandableError",
    "Coef", "XiMonomial", "AbsXiPower", "MuPower", "Sum", "Prod", "Inv",
    "coef", "const", "xi_mono", "xi_var", "abs_xi", "mu_pow", "zero", "one",
    "add", "mul", "inv", "neg", "sub", "scale",
    "expr_eval", "eval_batch", "eval_trace", "expr_dxi", "expr_delta", "expr_dB",
    "expr_twisted", "expr_mu_expand", "mu_series", "expr_degree", "expr_simplify", "expr_adjoint",
    "print_expr", "multi_indices", "multi_indices_upto", "count_nodes",
]

DEG_TOL = 1e-12


class UnexpandableError(ValueError):
    """Raised when an Inv node has no large-mu Neumann expansion."""


class TwistMatrix:
    """Real skew-symmetric ``n x n`` matrix ``B``.

    Parameters
    ----------
    B : array_like
        Square real matrix with ``B + B^T = 0`` within 1e-14.
    """

    __slots__ = ("B", "_key")

    def __init__(self, B):
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise ValueError("twist matrix must be square")
        bad = np.argwhere(np.abs(B + B.T) > 1e-14)
        if bad.size:
            i, j = bad[0]
            raise ValueError(f"twist matrix is not skew-symmetric at entry ({i}, {j})")
        B = B.copy()
        B.setflags(write=False)
        self.B = B
        self._key = (B.shape[0], B.tobytes())

    @classmethod
    def zeros(cls, n: int) -> "TwistMatrix":
        return cls(np.zeros((n, n)))

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def is_zero(self) -> bool:
        return not np.any(self.B)

    def __eq__(self, other):
        return isinstance(other, TwistMatrix) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"TwistMatrix({self.B.tolist()})"


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------

class Expr:
    """Interned DAG node.  Build through the constructors of this module."""

    __slots__ = ("kind", "args", "backend", "degree", "central", "has_mu", "__weakref__")

    def __init__(self, kind, args, backend, degree, central, has_mu):
        self.kind = kind
        self.args = args
        self.backend = backend
        self.degree = degree
        self.central = central
        self.has_mu = has_mu

    def __repr__(self):
        return f"Expr({print_expr(self)})"

    # convenience operators delegate to the canonical constructors
    def __add__(self, other):
        return add(self, _lift(self.backend, other))

    def __radd__(self, other):
        return add(_lift(self.backend, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self.backend, other))

    def __rsub__(self, other):
        return sub(_lift(self.backend, other), self)

    def __mul__(self, other):
        return mul(self, _lift(self.backend, other))

    def __rmul__(self, other):
        return mul(_lift(self.backend, other), self)

    def __neg__(self):
        return neg(self)

    @property
    def children(self) -> tuple:
        return self.args if self.kind in ("sum", "prod", "inv") else ()

    def is_zero(self) -> bool:
        return self.kind == "sum" and not self.args

    def is_one(self) -> bool:
        return self is one(self.backend)


def _lift(bk, x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, AlgebraElement):
        return coef(x)
    if isinstance(x, (int, float, complex, np.number)):
        return const(bk, x)
    raise TypeError(f"cannot combine Expr with {type(x).__name__}")


_TABLE: dict = {}
_LOCK = threading.Lock()


def _intern(key, factory) -> Expr:
    node = _TABLE.get(key)
    if node is not None:
        return node
    with _LOCK:
        node = _TABLE.get(key)
        if node is None:
            node = factory()
            _TABLE[key] = node
    return node


def _check_backend(nodes: Sequence[Expr]) -> AlgebraBackend:
    bk = nodes[0].backend
    for c in nodes[1:]:
        if c.backend != bk:
            raise ValueError(f"backend mismatch in expression: {bk.describe()} vs {c.backend.describe()}")
    return bk


def _sum_degree(children):
    degs = [c.degree for c in children]
    if not degs or any(d is None for d in degs):
        return None
    if all(abs(d - degs[0]) <= DEG_TOL for d in degs):
        return degs[0]
    return None


def _prod_degree(children):
    degs = [c.degree for c in children]
    if any(d is None for d in degs):
        return None
    return float(sum(degs))


# raw node builders (no simplification)

def Coef(a: AlgebraElement) -> Expr:
    """Raw constant node."""
    sv = a.scalar_value()
    return _intern(("coef",) + a.key(),
                   lambda: Expr("coef", (a,), a.backend, 0.0, sv is not None, False))


def XiMonomial(bk: AlgebraBackend, beta: Sequence[int]) -> Expr:
    beta = tuple(int(b) for b in beta)
    if len(beta) != bk.n or any(b < 0 for b in beta):
        raise ValueError(f"bad xi multi-index {beta} for n={bk.n}")
    return _intern(("xi", bk, beta), lambda: Expr("xi", beta, bk, float(sum(beta)), True, False))


def AbsXiPower(bk: AlgebraBackend, s: float) -> Expr:
    s = float(s)
    return _intern(("absxi", bk, s), lambda: Expr("absxi", (s,), bk, s, True, False))


def MuPower(bk: AlgebraBackend, d: float) -> Expr:
    d = float(d)
    return _intern(("mu", bk, d), lambda: Expr("mu", (d,), bk, d, True, True))


def Sum(*children: Expr, backend: AlgebraBackend | None = None) -> Expr:
    """Raw sum node; ``Sum(backend=bk)`` with no children is the zero."""
    if not children:
        if backend is None:
            raise ValueError("empty Sum needs a backend")
        bk = backend
    else:
        bk = _check_backend(children)
    key = ("sum", bk) + tuple(id(c) for c in children)
    return _intern(key, lambda: Expr("sum", tuple(children), bk,
                                     _sum_degree(children) if children else None,
                                     all(c.central for c in children),
                                     any(c.has_mu for c in children)))


def Prod(*children: Expr) -> Expr:
    """Raw product node (order preserved, no simplification)."""
    if not children:
        raise ValueError("empty Prod; use one(backend)")
    bk = _check_backend(children)
    key = ("prod", bk) + tuple(id(c) for c in children)
    return _intern(key, lambda: Expr("prod", tuple(children), bk, _prod_degree(children),
                                     all(c.central for c in children),
                                     any(c.has_mu for c in children)))


def Inv(child: Expr) -> Expr:
    key = ("inv", child.backend, id(child))
    deg = None if child.degree is None else -child.degree
    return _intern(key, lambda: Expr("inv", (child,), child.backend, deg, child.central, child.has_mu))


# ---------------------------------------------------------------------------
# canonical constructors
# ---------------------------------------------------------------------------

def zero(bk: AlgebraBackend) -> Expr:
    return Sum(backend=bk)


def one(bk: AlgebraBackend) -> Expr:
    return Coef(identity(bk))


def coef(a: AlgebraElement) -> Expr:
    """Constant node; structurally zero elements give :func:`zero`."""
    if a.is_zero():
        return zero(a.backend)
    return Coef(a)


def const(bk: AlgebraBackend, c) -> Expr:
    """The constant ``c * 1``."""
    return coef(scalar_element(bk, complex(c)))


def xi_mono(bk: AlgebraBackend, beta: Sequence[int]) -> Expr:
    if not any(beta):
        XiMonomial(bk, beta)  # validates
        return one(bk)
    return XiMonomial(bk, beta)


def xi_var(bk: AlgebraBackend, j: int) -> Expr:
    """The coordinate ``xi_j`` (1-based)."""
    beta = [0] * bk.n
    beta[j - 1] = 1
    return XiMonomial(bk, beta)


def abs_xi(bk: AlgebraBackend, s: float) -> Expr:
    return one(bk) if s == 0 else AbsXiPower(bk, s)


def mu_pow(bk: AlgebraBackend, d: float) -> Expr:
    return one(bk) if d == 0 else MuPower(bk, d)


def _scalar_of(e: Expr):
    """Return c if ``e`` is a scalar constant node ``c * 1``, else None."""
    if e.kind == "coef" and e.central:
        return e.args[0].scalar_value()
    return None


def mul(*factors: Expr) -> Expr:
    """Canonical noncommutative product."""
    if not factors:
        raise ValueError("mul needs at least one factor")
    bk = _check_backend(factors)
    flat = []
    for f in factors:
        if f.kind == "prod":
            flat.extend(f.args)
        else:
            flat.append(f)
    c = 1 + 0j
    beta = np.zeros(bk.n, dtype=int)
    s_abs = 0.0
    d_mu = 0.0
    others: list[Expr] = []
    for f in flat:
        if f.is_zero():
            return zero(bk)
        sv = _scalar_of(f)
        if sv is not None:
            c *= sv
        elif f.kind == "xi":
            beta += np.array(f.args)
        elif f.kind == "absxi":
            s_abs += f.args[0]
        elif f.kind == "mu":
            d_mu += f.args[0]
        else:
            others.append(f)
    # merge adjacent constants; a merged constant may turn out scalar
    rest = []
    for f in others:
        if f.kind == "coef" and rest and rest[-1].kind == "coef":
            merged = rest[-1].args[0] * f.args[0]
            if merged.is_zero():
                return zero(bk)
            sv = merged.scalar_value()
            if sv is not None:
                rest.pop()
                c *= sv
            else:
                rest[-1] = Coef(merged)
        else:
            rest.append(f)
    if c == 0:
        return zero(bk)
    if c != 1 and len(rest) == 1 and rest[0].kind == "coef" and not beta.any() \
            and s_abs == 0 and d_mu == 0:
        return coef(rest[0].args[0] * c)
    out = []
    if c != 1:
        out.append(Coef(scalar_element(bk, c)))
    if beta.any():
        out.append(XiMonomial(bk, beta))
    if s_abs != 0:
        out.append(AbsXiPower(bk, s_abs))
    if d_mu != 0:
        out.append(MuPower(bk, d_mu))
    out.extend(rest)
    if not out:
        return one(bk)
    if len(out) == 1:
        return out[0]
    return Prod(*out)


def _split_scalar(e: Expr):
    """Split ``e`` into (c, R) with ``e = c * R`` and R free of a leading scalar."""
    if e.kind == "prod":
        sv = _scalar_of(e.args[0])
        if sv is not None:
            rest = e.args[1:]
            return sv, (rest[0] if len(rest) == 1 else Prod(*rest))
    return 1 + 0j, e


def add(*terms: Expr) -> Expr:
    """Canonical sum: flatten, drop zeros, merge constants and like terms."""
    if not terms:
        raise ValueError("add needs at least one term")
    bk = _check_backend(terms)
    flat = []
    for t in terms:
        if t.kind == "sum":
            flat.extend(t.args)
        else:
            flat.append(t)
    order: list = []
    groups: dict = {}
    const_payload = None
    for t in flat:
        if t.kind == "coef":
            if const_payload is None:
                const_payload = np.array(t.args[0].payload)
                order.append("const")
            else:
                const_payload = const_payload + t.args[0].payload
            continue
        c, R = _split_scalar(t)
        if R.kind == "coef":
            p = c * np.asarray(R.args[0].payload)
            if const_payload is None:
                const_payload = p
                order.append("const")
            else:
                const_payload = const_payload + p
            continue
        if id(R) in groups:
            groups[id(R)][1] += c
        else:
            groups[id(R)] = [R, c]
            order.append(id(R))
    out = []
    for key in order:
        if key == "const":
            node = coef(AlgebraElement(bk, const_payload))
        else:
            R, c = groups[key]
            node = zero(bk) if c == 0 else (R if c == 1 else mul(Coef(scalar_element(bk, c)), R))
        if not node.is_zero():
            out.append(node)
    if not out:
        return zero(bk)
    if len(out) == 1:
        return out[0]
    return Sum(*out)


def scale(c, e: Expr) -> Expr:
    """``c * e`` for a complex scalar ``c``."""
    c = complex(c)
    if c == 0:
        return zero(e.backend)
    if c == 1:
        return e
    return mul(Coef(scalar_element(e.backend, c)), e)


def neg(e: Expr) -> Expr:
    return scale(-1, e)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def inv(u: Expr) -> Expr:
    """Canonical inverse."""
    bk = u.backend
    if u.is_zero():
        raise SingularElementError("inverse of the structural zero")
    if u.kind == "coef":
        return Coef(u.args[0].inverse())
    if u.kind == "inv":
        return u.args[0]
    if u.kind == "mu":
        return mu_pow(bk, -u.args[0])
    if u.kind == "absxi":
        return abs_xi(bk, -u.args[0])
    if u.kind == "prod":
        c, R = _split_scalar(u)
        if c != 1:
            return mul(Coef(scalar_element(bk, 1 / c)), inv(R))
    return Inv(u)


def expr_simplify(e: Expr) -> Expr:
    """Rebuild ``e`` through the canonical constructors."""
    memo: dict = {}

    def go(x):
        r = memo.get(id(x))
        if r is not None:
            return r
        if x.kind == "coef":
            r = coef(x.args[0])
        elif x.kind == "xi":
            r = xi_mono(x.backend, x.args)
        elif x.kind == "absxi":
            r = abs_xi(x.backend, x.args[0])
        elif x.kind == "mu":
            r = mu_pow(x.backend, x.args[0])
        elif x.kind == "sum":
            r = add(*[go(c) for c in x.args]) if x.args else x
        elif x.kind == "prod":
            r = mul(*[go(c) for c in x.args])
        else:
            r = inv(go(x.args[0]))
        memo[id(x)] = r
        return r

    return go(e)


def expr_degree(e: Expr):
    """Structural joint (xi, mu) homogeneity degree, or None."""
    return e.degree


def count_nodes(e: Expr) -> int:
    seen = set()
    stack = [e]
    while stack:
        x = stack.pop()
        if id(x) in seen:
            continue
        seen.add(id(x))
        stack.extend(x.children)
    return len(seen)


# ---------------------------------------------------------------------------
# multi-indices
# ---------------------------------------------------------------------------

def multi_indices(n: int, total: int) -> list:
    """Multi-indices of length ``n`` and size ``total``, lexicographic."""
    return [a for a in itertools.product(range(total + 1), repeat=n) if sum(a) == total]


def multi_indices_upto(n: int, total: int) -> list:
    """All multi-indices with ``|a| <= total``: size ascending, then lexicographic."""
    out = []
    for t in range(total + 1):
        out.extend(multi_indices(n, t))
    return out


def _factorial(a) -> int:
    return math.prod(math.factorial(v) for v in a)


def _binom(a, b) -> int:
    return math.prod(math.comb(x, y) for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _dxi(e: Expr, j: int) -> Expr:
    bk = e.backend
    k = e.kind
    if k in ("coef", "mu"):
        return zero(bk)
    if k == "xi":
        b = e.args[j]
        if b == 0:
            return zero(bk)
        beta = list(e.args)
        beta[j] -= 1
        return scale(b, xi_mono(bk, beta))
    if k == "absxi":
        s = e.args[0]
        ej = [0] * bk.n
        ej[j] = 1
        return scale(s, mul(XiMonomial(bk, ej), abs_xi(bk, s - 2)))
    if k == "sum":
        if not e.args:
            return e
        return add(*[_dxi(c, j) for c in e.args])
    if k == "prod":
        terms = []
        for i, c in enumerate(e.args):
            dc = _dxi(c, j)
            if dc.is_zero():
                continue
            terms.append(mul(*e.args[:i], dc, *e.args[i + 1:]))
        return add(*terms) if terms else zero(bk)
    du = _dxi(e.args[0], j)
    if du.is_zero():
        return zero(bk)
    return mul(const(bk, -1), e, du, e)


def expr_dxi(e: Expr, j: int) -> Expr:
    """Exact partial derivative in ``xi_j`` (0-based axis)."""
    if not 0 <= j < e.backend.n:
        raise ValueError(f"axis {j} out of range for n={e.backend.n}")
    return _dxi(e, j)


def expr_dxi_multi(e: Expr, alpha: Sequence[int]) -> Expr:
    """``d_xi^alpha e``."""
    for j, a in enumerate(alpha):
        for _ in range(a):
            e = _dxi(e, j)
    return e


@lru_cache(maxsize=None)
def _delta(e: Expr, j: int) -> Expr:
    bk = e.backend
    if e.central or bk.kind == "scalar":
        return zero(bk)
    k = e.kind
    if k == "coef":
        g = [0] * bk.n
        g[j] = 1
        return coef(e.args[0].delta(g))
    if k == "sum":
        return add(*[_delta(c, j) for c in e.args])
    if k == "prod":
        terms = []
        for i, c in enumerate(e.args):
            dc = _delta(c, j)
            if dc.is_zero():
                continue
            terms.append(mul(*e.args[:i], dc, *e.args[i + 1:]))
        return add(*terms) if terms else zero(bk)
    if k == "inv":
        du = _delta(e.args[0], j)
        if du.is_zero():
            return zero(bk)
        return mul(const(bk, -1), e, du, e)
    return zero(bk)


def expr_delta(e: Expr, gamma: Sequence[int]) -> Expr:
    """``delta^gamma e`` for a derivation multi-index ``gamma``."""
    gamma = tuple(int(g) for g in gamma)
    if len(gamma) != e.backend.n:
        raise ValueError(f"derivation index {gamma} has wrong length for n={e.backend.n}")
    for j, g in enumerate(gamma):
        for _ in range(g):
            e = _delta(e, j)
    return e


@lru_cache(maxsize=None)
def _dB(e: Expr, j: int, B: TwistMatrix) -> Expr:
    terms = [scale(B.B[k, j], _dxi(e, k)) for k in range(B.n) if B.B[k, j] != 0]
    return add(*terms) if terms else zero(e.backend)


def expr_dB(e: Expr, gamma: Sequence[int], B: TwistMatrix) -> Expr:
    """Iterated twisted derivative ``d_B^gamma`` with ``d_{B,j} = sum_k B_kj d_k``."""
    if B.n != e.backend.n:
        raise ValueError("twist dimension does not match the backend")
    for j, g in enumerate(gamma):
        for _ in range(g):
            e = _dB(e, j, B)
    return e


@lru_cache(maxsize=None)
def _twisted(e: Expr, alpha: tuple, B: TwistMatrix) -> Expr:
    terms = []
    for beta in itertools.product(*[range(a + 1) for a in alpha]):
        gamma = tuple(a - b for a, b in zip(alpha, beta))
        t = expr_delta(expr_dB(e, gamma, B), beta)
        if t.is_zero():
            continue
        terms.append(scale(_binom(alpha, beta) * 1j ** sum(beta), t))
    return add(*terms) if terms else zero(e.backend)


def expr_twisted(e: Expr, alpha: Sequence[int], B: TwistMatrix) -> Expr:
    """``sum_{beta+gamma=alpha} binom(alpha, beta) i^|beta| delta^beta d_B^gamma e``."""
    alpha = tuple(int(a) for a in alpha)
    if not any(alpha):
        return e
    return _twisted(e, alpha, B)


def expr_adjoint(e: Expr) -> Expr:
    """Pointwise adjoint ``e(xi)^*`` for real ``xi``; mu must be absent."""
    memo: dict = {}

    def go(x):
        r = memo.get(id(x))
        if r is not None:
            return r
        k = x.kind
        if k == "coef":
            r = coef(x.args[0].adjoint())
        elif k in ("xi", "absxi"):
            r = x
        elif k == "mu":
            raise ValueError("adjoint of a mu-dependent expression is not defined here")
        elif k == "sum":
            r = add(*[go(c) for c in x.args]) if x.args else x
        elif k == "prod":
            r = mul(*[go(c) for c in reversed(x.args)])
        else:
            r = inv(go(x.args[0]))
        memo[id(x)] = r
        return r

    return go(e)


def clear_caches():
    """Drop derivative memo tables (the intern table is kept)."""
    _dxi.cache_clear()
    _delta.cache_clear()
    _dB.cache_clear()
    _twisted.cache_clear()


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _as_batch(bk, xi, mu):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0:
        xi = xi.reshape(1, 1)
    elif xi.ndim == 1:
        # n = 1: a vector of points; n > 1: a single point
        xi = xi.reshape(-1, 1) if bk.n == 1 else xi.reshape(1, -1)
    if xi.shape[-1] != bk.n:
        raise ValueError(f"xi has {xi.shape[-1]} components, backend has n={bk.n}")
    P = xi.shape[0]
    if mu is not None:
        mu = np.asarray(mu, dtype=complex)
        mu = np.broadcast_to(mu.reshape(-1) if mu.ndim else mu, (P,))
    return xi, mu, P


def eval_batch(e: Expr, xi, mu=None) -> np.ndarray:
    """Evaluate ``e`` at ``P`` points.

    Parameters
    ----------
    xi : array_like, shape (P, n)
    mu : complex or array_like of shape (P,), optional
        Required if ``e`` contains mu.

    Returns
    -------
    ndarray, shape (P,) + backend.elem_shape
    """
    bk = e.backend
    xi, mu, P = _as_batch(bk, xi, mu)
    if e.has_mu and mu is None:
        raise ValueError("expression depends on mu but no mu was given")
    nrm = None
    memo: dict = {}

    def to_alg(v):
        tag, x = v
        if tag == "a":
            return x
        return payload_scale(bk, x, payload_identity(bk))

    def go(x):
        nonlocal nrm
        r = memo.get(id(x))
        if r is not None:
            return r
        k = x.kind
        if k == "coef":
            sv = _scalar_of(x)
            r = ("s", np.complex128(sv)) if sv is not None else ("a", x.args[0].payload)
        elif k == "xi":
            r = ("s", np.prod(xi ** np.array(x.args), axis=1).astype(complex))
        elif k == "absxi":
            if nrm is None:
                nrm = np.linalg.norm(xi, axis=1)
            s = x.args[0]
            if s < 0 and np.any(nrm == 0):
                raise ValueError("|xi|^s with s < 0 evaluated at xi = 0")
            r = ("s", (nrm ** s).astype(complex))
        elif k == "mu":
            r = ("s", np.power(mu, x.args[0]))
        elif k == "sum":
            if not x.args:
                r = ("s", np.complex128(0))
            else:
                vals = [go(c) for c in x.args]
                if all(v[0] == "s" for v in vals):
                    acc = vals[0][1]
                    for v in vals[1:]:
                        acc = acc + v[1]
                    r = ("s", acc)
                else:
                    acc = to_alg(vals[0])
                    for v in vals[1:]:
                        acc = acc + to_alg(v)
                    r = ("a", acc)
        elif k == "prod":
            acc = go(x.args[0])
            for c in x.args[1:]:
                v = go(c)
                if acc[0] == "s" and v[0] == "s":
                    acc = ("s", acc[1] * v[1])
                elif acc[0] == "s":
                    acc = ("a", payload_scale(bk, acc[1], v[1]))
                elif v[0] == "s":
                    acc = ("a", payload_scale(bk, v[1], acc[1]))
                else:
                    acc = ("a", payload_mul(bk, acc[1], v[1]))
            r = acc
        else:
            v = go(x.args[0])
            if v[0] == "s":
                if np.any(v[1] == 0):
                    raise SingularElementError("inverse of a vanishing scalar factor")
                r = ("s", 1.0 / v[1])
            else:
                r = ("a", payload_inverse(bk, v[1]))
        memo[id(x)] = r
        return r

    out = to_alg(go(e))
    return np.array(np.broadcast_to(out, (P,) + bk.elem_shape), dtype=complex)


def eval_trace(e: Expr, xi, mu=None) -> np.ndarray:
    """``psi(e(xi, mu))`` at ``P`` points, shape ``(P,)``."""
    return payload_trace(e.backend, eval_batch(e, xi, mu))


def expr_eval(e: Expr, xi, mu=None) -> AlgebraElement:
    """Evaluate at a single point ``(xi, mu)``."""
    xi = np.asarray(xi, dtype=float).reshape(1, e.backend.n)
    return AlgebraElement(e.backend, eval_batch(e, xi, mu)[0])


# ---------------------------------------------------------------------------
# large-mu expansion
# ---------------------------------------------------------------------------

def expr_mu_expand(e: Expr, M: int) -> list:
    """Large-mu expansion ``e ~ sum_nu mu^(d - nu) q_nu(xi)``.

    Parameters
    ----------
    e : Expr
    M : int
        Number of integer steps ``nu = 0, ..., M-1`` to keep.

    Returns
    -------
    list of (exponent, Expr)
        Structurally nonzero coefficients ``q_nu`` (mu-free) with their
        mu-exponents, in decreasing exponent order.

    Raises
    ------
    UnexpandableError
        If an Inv node's leading coefficient is not an invertible constant,
        or a sum mixes exponents that differ by a non-integer.
    """
    lead, coeffs = _series(e, int(M), {})
    if lead is None:
        return []
    return [(lead - nu, c) for nu, c in enumerate(coeffs[:M]) if not c.is_zero()]


def mu_series(e: Expr, M: int):
    """Raw series ``(lead, [q_0, ..., q_{M-1}])``; ``lead`` is None for zero."""
    lead, coeffs = _series(e, int(M), {})
    return lead, list(coeffs[:M])


def _series(e: Expr, M: int, memo: dict):
    key = (id(e), M)
    if key in memo:
        return memo[key]
    bk = e.backend
    Z = zero(bk)
    if e.is_zero() or M <= 0:
        res = (None, [])
    elif not e.has_mu:
        res = (0.0, [e] + [Z] * (M - 1))
    elif e.kind == "mu":
        res = (e.args[0], [one(bk)] + [Z] * (M - 1))
    elif e.kind == "sum":
        res = _normalize(lambda MM: _series_sum(e, MM, memo), M)
    elif e.kind == "prod":
        res = _normalize(lambda MM: _series_prod(e, MM, memo), M)
    else:
        res = _series_inv(e, M, memo)
    memo[key] = res
    return res


def _normalize(build, M, max_extra=8):
    """Strip structurally zero leading coefficients, extending the order."""
    for extra in range(max_extra + 1):
        lead, coeffs = build(M + extra)
        if lead is None:
            return None, []
        z = 0
        while z < len(coeffs) and coeffs[z].is_zero():
            z += 1
        if z == len(coeffs):
            if extra == max_extra:
                return None, []
            continue
        if z <= extra:
            return lead - z, coeffs[z:z + M]
    raise UnexpandableError("leading coefficients cancel beyond the search depth")


def _series_sum(e, M, memo):
    bk = e.backend
    parts = [_series(c, M, memo) for c in e.args]
    parts = [p for p in parts if p[0] is not None]
    if not parts:
        return None, []
    lead = max(p[0] for p in parts)
    buckets = [[] for _ in range(M)]
    for pl, pc in parts:
        off = lead - pl
        ioff = int(round(off))
        if abs(off - ioff) > 1e-9:
            raise UnexpandableError(f"mu exponents {lead} and {pl} differ by a non-integer")
        for nu in range(ioff, M):
            buckets[nu].append(pc[nu - ioff])
    return lead, [add(*b) if b else zero(bk) for b in buckets]


def _series_prod(e, M, memo):
    bk = e.backend
    lead = 0.0
    acc = [one(bk)] + [zero(bk)] * (M - 1)
    for c in e.args:
        pl, pc = _series(c, M, memo)
        if pl is None:
            return None, []
        lead += pl
        new = []
        for nu in range(M):
            terms = [mul(acc[i], pc[nu - i]) for i in range(nu + 1)
                     if not acc[i].is_zero() and not pc[nu - i].is_zero()]
            new.append(add(*terms) if terms else zero(bk))
        acc = new
    return lead, acc


def _series_inv(e, M, memo):
    bk = e.backend
    lead, q = _series(e.args[0], M, memo)
    if lead is None:
        raise UnexpandableError("inverse of an expression whose expansion vanishes")
    q0 = q[0]
    if q0.kind != "coef":
        raise UnexpandableError(
            f"Inv node has non-constant leading mu-coefficient {print_expr(q0)}; "
            "only Inv(h(xi) - c mu^m + lower) shapes are expandable")
    try:
        r0 = inv(q0)
    except SingularElementError as exc:
        raise UnexpandableError(f"leading mu-coefficient is not invertible: {exc}") from None
    r = [r0]
    for nu in range(1, M):
        terms = [mul(q[i], r[nu - i]) for i in range(1, nu + 1)
                 if not q[i].is_zero() and not r[nu - i].is_zero()]
        r.append(mul(const(bk, -1), r0, add(*terms)) if terms else zero(bk))
    return -lead, r


# ---------------------------------------------------------------------------
# printer
# ---------------------------------------------------------------------------

def _fmt_real(x: float) -> str:
    return repr(float(x))


def _fmt_complex(c: complex) -> str:
    re, im = float(c.real), float(c.imag)
    if im == 0:
        return _fmt_real(re)
    if re == 0:
        return f"{_fmt_real(im)}i"
    sign = "-" if im < 0 or (im == 0 and math.copysign(1, im) < 0) else "+"
    return f"({_fmt_real(re)}{sign}{_fmt_real(abs(im))}i)"


def _fmt_element(a: AlgebraElement) -> str:
    sv = a.scalar_value()
    if sv is not None:
        return _fmt_complex(sv)
    bk = a.backend
    if bk.kind == "matrix":
        rows = ", ".join("[" + ", ".join(repr(complex(v)) for v in row) + "]" for row in a.payload)
        return f"mat([{rows}])"
    terms = []
    for idx in np.flatnonzero(a.payload):
        k = ",".join(str(int(v)) for v in bk.modes[idx])
        c = a.payload[idx]
        if idx == bk.zero_mode:
            terms.append(_fmt_complex(c))
        else:
            terms.append(f"{_fmt_complex(c)}*U[{k}]")
    return "(" + " + ".join(terms) + ")" if len(terms) > 1 else terms[0]


def print_expr(e: Expr) -> str:
    """Deterministic, fully parenthesized rendering; reparses to ``e``."""
    memo: dict = {}

    def go(x):
        r = memo.get(id(x))
        if r is not None:
            return r
        k = x.kind
        if k == "coef":
            r = _fmt_element(x.args[0])
        elif k == "xi":
            parts = [f"xi{j + 1}^{b}" if b != 1 else f"xi{j + 1}" for j, b in enumerate(x.args) if b]
            r = parts[0] if len(parts) == 1 else "(" + " * ".join(parts) + ")"
        elif k == "absxi":
            r = f"|xi|^{_fmt_real(x.args[0])}"
        elif k == "mu":
            r = f"mu^{_fmt_real(x.args[0])}"
        elif k == "sum":
            r = "0" if not x.args else "(" + " + ".join(go(c) for c in x.args) + ")"
        elif k == "prod":
            r = "(" + " * ".join(go(c) for c in x.args) + ")"
        else:
            r = f"inv({go(x.args[0])})"
        memo[id(x)] = r
        return r

    return go(e)
