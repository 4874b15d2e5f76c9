"""
Schur-test bounds for algebra-valued integral kernels and the desk-scale
discretizations used to check them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate as sint
from scipy.sparse.linalg import svds

from . import symexpr as sx
from .algebra import AlgebraBackend, AlgebraElement, payload_alpha, payload_norm
from .calculus import PolyhomSymbol, symbol_eval
from .quadrature import QuadratureError


@dataclass
class KernelGrid:
    """Kernel norms ``||k(x_i, y_j)||`` on a uniform grid of ``[-L, L]``.

    Attributes
    ----------
    x : ndarray, shape (G,)
    norms : ndarray, shape (G, G)
    p, q : ndarray, shape (G,)
        Schur weights at ``x_i`` and ``y_j``.
    samples : ndarray, optional
        Full kernel payloads ``(G, G) + elem_shape`` for block discretization.
    backend : AlgebraBackend, optional
    """

    L: float
    G: int
    x: np.ndarray
    norms: np.ndarray
    p: np.ndarray
    q: np.ndarray
    samples: np.ndarray | None = None
    backend: AlgebraBackend | None = None

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("half-width L must be positive")
        if self.G < 2:
            raise ValueError("grid size G must be >= 2")
        if self.norms.shape != (self.G, self.G):
            raise ValueError("norm array must be G x G")
        if not np.all(np.isfinite(self.norms)) or np.any(self.norms < 0):
            raise ValueError("kernel norms must be finite and nonnegative")

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights."""
        h = 2 * self.L / (self.G - 1)
        w = np.full(self.G, h)
        w[0] = w[-1] = h / 2
        return w


def kernel_grid(kernel, L: float, G: int, p=None, q=None, backend: AlgebraBackend | None = None,
                keep_samples: bool = True) -> KernelGrid:
    """Sample ``kernel(x[:, None], y[None, :])`` on the grid.

    ``kernel`` returns an array of shape ``(G, G)`` (scalar kernel) or
    ``(G, G) + backend.elem_shape`` (algebra-valued kernel).
    """
    x = np.linspace(-L, L, G)
    vals = np.asarray(kernel(x[:, None], x[None, :]))
    if backend is None or backend.elem_ndim == 0:
        norms = np.abs(vals)
    else:
        norms = payload_norm(backend, vals)
    p = np.ones(G) if p is None else np.broadcast_to(np.asarray(p(x) if callable(p) else p, float), (G,))
    q = np.ones(G) if q is None else np.broadcast_to(np.asarray(q(x) if callable(q) else q, float), (G,))
    return KernelGrid(float(L), int(G), x, norms, np.array(p), np.array(q),
                      vals if keep_samples else None, backend)


@dataclass
class SchurResult:
    alpha: float
    beta: float
    bound: float
    sharp: float

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "bound": self.bound, "sharp": self.sharp}


def schur_bound(kg: KernelGrid) -> SchurResult:
    """Schur constants ``alpha``, ``beta`` and the bound ``4 sqrt(alpha beta)``.

    ``alpha = max_x int ||k(x,y)|| q(y) dy / p(x)`` and
    ``beta = max_y int ||k(x,y)|| p(x) dx / q(y)`` by the trapezoid rule.
    ``sharp = sqrt(alpha beta)`` is reported alongside.
    """
    if np.any(kg.p <= 0) or np.any(kg.q <= 0):
        raise ValueError("Schur weights p and q must be positive on the grid")
    w = kg.weights
    rows = kg.norms @ (kg.q * w)
    cols = (kg.p * w) @ kg.norms
    alpha = float(np.max(rows / kg.p))
    beta = float(np.max(cols / kg.q))
    s = math.sqrt(alpha * beta)
    return SchurResult(alpha, beta, 4 * s, s)


def _top_singular(A: np.ndarray) -> float:
    if not A.any():
        return 0.0
    if min(A.shape) <= 256:
        return float(np.linalg.norm(A, 2))
    v0 = np.ones(min(A.shape))
    s = svds(A, k=1, v0=v0, tol=1e-13, return_singular_vectors=False, random_state=0)
    return float(s[0])


def discretized_opnorm(kg: KernelGrid, block: bool = True) -> float:
    """Largest singular value of ``W^1/2 K W^1/2`` with trapezoid weights ``W``.

    Matrix-valued samples are discretized as a block matrix; nctorus
    samples (or ``block=False``) use the grid of kernel norms, which gives
    an upper bound.
    """
    sw = np.sqrt(kg.weights)
    if block and kg.samples is not None:
        bk = kg.backend
        if bk is None or bk.kind == "scalar":
            A = sw[:, None] * np.asarray(kg.samples).reshape(kg.G, kg.G) * sw[None, :]
            return _top_singular(A)
        if bk.kind == "matrix":
            N = bk.N
            S = np.asarray(kg.samples) * (sw[:, None] * sw[None, :])[..., None, None]
            A = S.transpose(0, 2, 1, 3).reshape(kg.G * N, kg.G * N)
            return _top_singular(A)
    return _top_singular(sw[:, None] * kg.norms * sw[None, :])


def _to_payload_fn(f, backend):
    """Callable ``xi -> payload`` for an Expr or a classical symbol."""
    if isinstance(f, sx.Expr):
        def fn(xi):
            return sx.eval_batch(f, np.atleast_1d(xi).reshape(-1, 1))
        return fn, f.backend
    if isinstance(f, PolyhomSymbol):
        if f.is_param:
            raise ValueError("kernel_from_symbol expects a mu-free symbol")

        def fn(xi):
            return symbol_eval(f, np.atleast_1d(xi).reshape(-1, 1))
        return fn, f.backend
    raise TypeError("f must be an Expr or a PolyhomSymbol")


def kernel_from_symbol(f, x: float, y: float, tol: float = 1e-7, limit: int = 400) -> AlgebraElement:
    """``K(x, y) = int e^{i (x - y) xi} alpha_{-x}(f(xi + B x)) dxi / (2 pi)`` for n = 1.

    The Fourier integral is split into even and odd parts on ``[0, inf)``
    and evaluated with QUADPACK's Fourier-weighted rules (``weight='cos'``
    and ``'sin'``); the twist drops out since a 1 x 1 skew matrix vanishes.

    Raises
    ------
    QuadratureError
        If an entry's estimated error exceeds ``tol`` times the largest
        entry magnitude of ``f`` on the real line samples.
    """
    fn, bk = _to_payload_fn(f, None)
    if bk.n != 1:
        raise ValueError("kernel_from_symbol is implemented for n = 1")
    cache: dict = {}

    def F(xi):
        xi = float(xi)
        v = cache.get(xi)
        if v is None:
            v = fn(xi)[0]
            cache[xi] = v
        return v

    t = float(x) - float(y)
    shape = bk.elem_shape
    scale = max(float(np.abs(F(0.0)).max()), float(np.abs(F(1.0)).max()), 1e-300)
    out = np.zeros(shape, dtype=complex)
    worst = 0.0
    for idx in np.ndindex(*shape) if shape else [()]:
        def even(xi, part):
            v = F(xi)[idx] + F(-xi)[idx]
            return v.real if part == 0 else v.imag

        def odd(xi, part):
            v = F(xi)[idx] - F(-xi)[idx]
            return v.real if part == 0 else v.imag

        vals = []
        for part in (0, 1):
            if t == 0:
                r, err = sint.quad(even, 0, np.inf, args=(part,), limit=limit, epsabs=tol * scale * 1e-2)
                vals.append((r, err, 0.0, 0.0))
            else:
                rc, ec = sint.quad(even, 0, np.inf, args=(part,), weight="cos", wvar=abs(t), limlst=100)
                rs, es = sint.quad(odd, 0, np.inf, args=(part,), weight="sin", wvar=abs(t), limlst=100)
                vals.append((rc, ec, math.copysign(1.0, t) * rs, es))
        re_c, re_ce, re_s, re_se = vals[0]
        im_c, im_ce, im_s, im_se = vals[1]
        out[idx] = (re_c + 1j * im_c) + 1j * (re_s + 1j * im_s)
        worst = max(worst, re_ce + im_ce + re_se + im_se)
    if worst > tol * scale * 2 * np.pi:
        raise QuadratureError(f"kernel quadrature did not converge (error {worst:.3e})", out, worst)
    payload = payload_alpha(bk, out / (2 * np.pi), [-float(x)])
    return AlgebraElement(bk, payload)


def sharper_schur_report(kg: KernelGrid) -> dict:
    """Experimental: measured norm against ``sqrt(alpha beta)`` (no claim)."""
    res = schur_bound(kg)
    measured = discretized_opnorm(kg)
    return {"sqrt_alpha_beta": res.sharp, "bound": res.bound, "measured": measured,
            "ratio_to_sqrt": measured / res.sharp if res.sharp else math.nan,
            "sqrt_dominates": measured <= res.sharp + 1e-6}
