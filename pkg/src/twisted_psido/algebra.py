"""
Concrete smooth algebras with an R^n action.

Three backends are provided:

* ``scalar``  -- the complex numbers with the trivial action.
* ``matrix``  -- N x N complex matrices, acted on by conjugation with
  ``exp(i <t, H>)`` for real diagonal generators ``H_1, ..., H_n``.
* ``nctorus`` -- the noncommutative torus in Weyl ordering, truncated to the
  Fourier band ``|k|_inf <= K``.

Every backend works on *payload arrays* which may carry arbitrary leading
batch axes.  A scalar payload has element shape ``()``, a matrix payload
``(N, N)`` and an nctorus payload ``(M,)`` with ``M = (2K+1)^n``.  The
batched functions (``payload_mul`` etc.) are what the expression evaluator
uses; :class:`AlgebraElement` wraps a single unbatched payload.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


class BackendMismatchError(ValueError):
    """Raised when elements from different backends are combined."""


class SingularElementError(ArithmeticError):
    """Raised when an element cannot be inverted to working accuracy.

    Attributes
    ----------
    residual : float
        ``||a a^{-1} - 1||`` of the attempted inverse (``inf`` if the solve
        itself failed).
    condition : float
        Condition estimate of the linear map that was inverted.
    """

    def __init__(self, message, residual=np.inf, condition=np.inf):
        super().__init__(message)
        self.residual = float(residual)
        self.condition = float(condition)


INVERSE_TOL = 1e-10


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlgebraBackend:
    """Descriptor of a concrete algebra with an R^n action.

    Use the constructors :func:`scalar_backend`, :func:`matrix_backend` and
    :func:`nctorus_backend` rather than instantiating directly.
    """

    kind: str
    n: int
    N: int = 1
    H: tuple = ()
    theta: tuple = ()
    K: int = 0

    # -- shape information -------------------------------------------------
    @property
    def elem_shape(self) -> tuple:
        if self.kind == "scalar":
            return ()
        if self.kind == "matrix":
            return (self.N, self.N)
        return (self.n_modes,)

    @property
    def elem_ndim(self) -> int:
        return len(self.elem_shape)

    # -- nctorus tables ----------------------------------------------------
    @cached_property
    def modes(self) -> np.ndarray:
        """Band modes ``k`` (rows) in lexicographic order."""
        rng = range(-self.K, self.K + 1)
        return np.array(list(itertools.product(rng, repeat=self.n)), dtype=int).reshape(-1, self.n)

    @property
    def n_modes(self) -> int:
        return (2 * self.K + 1) ** self.n

    @cached_property
    def zero_mode(self) -> int:
        return self.n_modes // 2

    def mode_index(self, k: Sequence[int]) -> int:
        """Flat payload index of the mode ``k`` (nctorus only)."""
        k = tuple(int(v) for v in k)
        if len(k) != self.n or max(abs(v) for v in k) > self.K:
            raise IndexError(f"mode {k} outside the band |k| <= {self.K}")
        idx = 0
        for v in k:
            idx = idx * (2 * self.K + 1) + (v + self.K)
        return idx

    @cached_property
    def _mult_tables(self):
        # L_a[r, l] = a[r - l] * exp(i/2 <r - l, theta l>), masked to the band
        modes = self.modes
        diff = modes[:, None, :] - modes[None, :, :]
        inside = np.all(np.abs(diff) <= self.K, axis=-1)
        base = 2 * self.K + 1
        flat = np.zeros(diff.shape[:2], dtype=int)
        for j in range(self.n):
            flat = flat * base + (diff[..., j] + self.K)
        flat = np.where(inside, flat, 0)
        th = np.array(self.theta, dtype=float)
        phase_arg = 0.5 * np.einsum("rli,ij,lj->rl", diff, th, modes)
        phase = np.where(inside, np.exp(1j * phase_arg), 0.0)
        return flat, phase

    @cached_property
    def H_diag(self) -> np.ndarray:
        """Generators of the matrix action as an ``(n, N)`` real array."""
        return np.array(self.H, dtype=float).reshape(self.n, self.N)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        if self.kind == "scalar":
            return {"kind": "scalar", "n": self.n}
        if self.kind == "matrix":
            return {"kind": "matrix", "N": self.N, "H": [list(h) for h in self.H]}
        return {"kind": "nctorus", "theta": [list(r) for r in self.theta], "K": self.K}

    def describe(self) -> str:
        if self.kind == "scalar":
            return f"scalar(n={self.n})"
        if self.kind == "matrix":
            return f"matrix(n={self.n}, N={self.N})"
        return f"nctorus(n={self.n}, K={self.K})"


def scalar_backend(n: int = 1) -> AlgebraBackend:
    """The complex numbers with the trivial R^n action."""
    if n < 1:
        raise ValueError("action dimension n must be >= 1")
    return AlgebraBackend("scalar", int(n))


def matrix_backend(H) -> AlgebraBackend:
    """N x N matrices with action generated by real diagonals.

    Parameters
    ----------
    H : array_like, shape (n, N)
        Row ``j`` holds the diagonal of the generator ``H_j``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
        raise ValueError("H must be a list of n >= 1 diagonals of length N >= 1")
    if not np.all(np.isfinite(H)):
        raise ValueError("generator diagonals must be finite")
    n, N = H.shape
    return AlgebraBackend("matrix", n, N=N, H=tuple(tuple(float(v) for v in row) for row in H))


def nctorus_backend(theta, K: int) -> AlgebraBackend:
    """Noncommutative torus ``U^k U^l = exp(i/2 <k, theta l>) U^{k+l}``.

    Parameters
    ----------
    theta : array_like, shape (n, n)
        Real skew-symmetric deformation matrix.
    K : int
        Fourier band radius; payloads hold modes with ``|k|_inf <= K``.
    """
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    if th.ndim != 2 or th.shape[0] != th.shape[1]:
        raise ValueError("theta must be a square matrix")
    bad = np.argwhere(np.abs(th + th.T) > 1e-14)
    if bad.size:
        i, j = bad[0]
        raise ValueError(f"theta is not skew-symmetric at entry ({i}, {j})")
    if int(K) < 1:
        raise ValueError("band radius K must be >= 1")
    return AlgebraBackend("nctorus", th.shape[0], theta=tuple(tuple(float(v) for v in r) for r in th),
                          K=int(K))


def backend_from_dict(d: dict) -> AlgebraBackend:
    """Inverse of :meth:`AlgebraBackend.to_dict`."""
    kind = d.get("kind")
    if kind == "scalar":
        return scalar_backend(d.get("n", 1))
    if kind == "matrix":
        return matrix_backend(d["H"])
    if kind == "nctorus":
        return nctorus_backend(d["theta"], d["K"])
    raise ValueError(f"unknown backend kind {kind!r}")


# ---------------------------------------------------------------------------
# batched payload arithmetic
# ---------------------------------------------------------------------------

def payload_identity(bk: AlgebraBackend) -> np.ndarray:
    if bk.kind == "scalar":
        return np.array(1.0 + 0j)
    if bk.kind == "matrix":
        return np.eye(bk.N, dtype=complex)
    out = np.zeros(bk.n_modes, dtype=complex)
    out[bk.zero_mode] = 1.0
    return out


def payload_zero(bk: AlgebraBackend) -> np.ndarray:
    return np.zeros(bk.elem_shape, dtype=complex)


def payload_scale(bk: AlgebraBackend, s, x):
    """Multiply payload ``x`` by the batch of scalars ``s``."""
    s = np.asarray(s)
    if bk.elem_ndim and s.ndim:
        s = s.reshape(s.shape + (1,) * bk.elem_ndim)
    return s * x


def left_matrix(bk: AlgebraBackend, a):
    """Left multiplication by ``a`` on the nctorus band, batched."""
    flat, phase = bk._mult_tables
    return a[..., flat] * phase


def payload_mul(bk: AlgebraBackend, a, b):
    if bk.kind == "scalar":
        return a * b
    if bk.kind == "matrix":
        return np.matmul(a, b)
    return np.matmul(left_matrix(bk, a), b[..., None])[..., 0]


def payload_adjoint(bk: AlgebraBackend, a):
    if bk.kind == "scalar":
        return np.conj(a)
    if bk.kind == "matrix":
        return np.conj(np.swapaxes(a, -1, -2))
    # (sum a_k U^k)* = sum conj(a_k) U^{-k}; mode list is symmetric under k -> -k
    return np.conj(a[..., ::-1])


def payload_trace(bk: AlgebraBackend, a):
    if bk.kind == "scalar":
        return a
    if bk.kind == "matrix":
        return np.trace(a, axis1=-2, axis2=-1) / bk.N
    return a[..., bk.zero_mode]


def payload_norm(bk: AlgebraBackend, a):
    if bk.kind == "scalar":
        return np.abs(a)
    if bk.kind == "matrix":
        return np.linalg.norm(a, ord=2, axis=(-2, -1))
    return np.linalg.norm(left_matrix(bk, a), ord=2, axis=(-2, -1))


def payload_inverse(bk: AlgebraBackend, a, tol: float = INVERSE_TOL):
    """Batched inverse with residual verification.

    Raises
    ------
    SingularElementError
        If any batch entry fails to invert or its residual exceeds ``tol``.
    """
    if bk.kind == "scalar":
        if np.any(a == 0):
            raise SingularElementError("scalar element is zero", condition=np.inf)
        return 1.0 / a
    if bk.kind == "matrix":
        try:
            inv = np.linalg.inv(a)
        except np.linalg.LinAlgError as exc:
            raise SingularElementError(f"matrix element is singular: {exc}") from None
        res = np.matmul(a, inv) - np.eye(bk.N)
        resn = np.abs(res).max() if res.size else 0.0
        if not np.isfinite(resn) or resn > tol:
            cond = float(np.max(np.linalg.cond(a)))
            raise SingularElementError(f"inverse residual {resn:.3e} exceeds {tol:.1e}",
                                       residual=resn, condition=cond)
        return inv
    L = left_matrix(bk, a)
    rhs = np.broadcast_to(payload_identity(bk), L.shape[:-1])
    try:
        x = np.linalg.solve(L, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularElementError(f"left multiplication is singular: {exc}") from None
    res = np.matmul(L, x[..., None])[..., 0] - rhs
    resn = np.abs(res).max() if res.size else 0.0
    if not np.isfinite(resn) or resn > tol:
        cond = float(np.max(np.linalg.cond(L)))
        raise SingularElementError(f"inverse residual {resn:.3e} exceeds {tol:.1e}",
                                   residual=resn, condition=cond)
    return x


def payload_delta(bk: AlgebraBackend, a, gamma: Sequence[int]):
    """Apply ``delta^gamma`` (batched)."""
    gamma = tuple(int(g) for g in gamma)
    if len(gamma) != bk.n:
        raise ValueError(f"derivation index {gamma} has wrong length for n={bk.n}")
    if any(g < 0 for g in gamma):
        raise ValueError("derivation index must be nonnegative")
    if sum(gamma) == 0:
        return a
    if bk.kind == "scalar":
        return np.zeros_like(a)
    if bk.kind == "matrix":
        h = bk.H_diag
        gap = np.ones((bk.N, bk.N))
        for j, g in enumerate(gamma):
            gap = gap * (h[j][:, None] - h[j][None, :]) ** g
        return a * gap
    fac = np.prod(bk.modes.astype(float) ** np.array(gamma), axis=1)
    return a * fac


def payload_alpha(bk: AlgebraBackend, a, t: Sequence[float]):
    """Apply the action ``alpha_t`` (batched in ``a``, single ``t``)."""
    t = np.asarray(t, dtype=float).reshape(bk.n)
    if bk.kind == "scalar":
        return a
    if bk.kind == "matrix":
        e = np.exp(1j * (t @ bk.H_diag))
        return a * (e[:, None] * np.conj(e)[None, :])
    return a * np.exp(1j * (bk.modes @ t))


def payload_scalar_value(bk: AlgebraBackend, a) -> complex | None:
    """Return ``c`` if the unbatched payload is exactly ``c * 1``, else None."""
    if bk.kind == "scalar":
        return complex(a)
    if bk.kind == "matrix":
        d = np.diag(a)
        if np.all(a - np.diag(d) == 0) and np.all(d == d[0]):
            return complex(d[0])
        return None
    c = a[bk.zero_mode]
    rest = np.delete(a, bk.zero_mode)
    if np.all(rest == 0):
        return complex(c)
    return None


# ---------------------------------------------------------------------------
# elements
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AlgebraElement:
    """Immutable element of a backend algebra.

    Parameters
    ----------
    backend : AlgebraBackend
    payload : ndarray
        Complex array of shape ``backend.elem_shape``.
    """

    backend: AlgebraBackend
    payload: np.ndarray = field(repr=False)

    def __post_init__(self):
        # + 0.0 maps -0.0 to 0.0 so that equal values share one key
        p = np.array(self.payload, dtype=complex) + 0.0
        if p.shape != self.backend.elem_shape:
            raise ValueError(f"payload shape {p.shape} does not match {self.backend.elem_shape}")
        p.setflags(write=False)
        object.__setattr__(self, "payload", p)

    def _check(self, other: "AlgebraElement"):
        if not isinstance(other, AlgebraElement):
            raise TypeError(f"expected AlgebraElement, got {type(other).__name__}")
        if other.backend != self.backend:
            raise BackendMismatchError(
                f"backend mismatch: {self.backend.describe()} vs {other.backend.describe()}")

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = identity(self.backend) * other
        self._check(other)
        return AlgebraElement(self.backend, self.payload + other.payload)

    __radd__ = __add__

    def __neg__(self):
        return AlgebraElement(self.backend, -self.payload)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return AlgebraElement(self.backend, self.payload * other)
        self._check(other)
        return AlgebraElement(self.backend, payload_mul(self.backend, self.payload, other.payload))

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return AlgebraElement(self.backend, self.payload * other)
        return NotImplemented

    def adjoint(self) -> "AlgebraElement":
        return AlgebraElement(self.backend, payload_adjoint(self.backend, self.payload))

    def norm(self) -> float:
        return float(payload_norm(self.backend, self.payload))

    def trace(self) -> complex:
        return complex(payload_trace(self.backend, self.payload))

    def inverse(self) -> "AlgebraElement":
        return AlgebraElement(self.backend, payload_inverse(self.backend, self.payload))

    def delta(self, gamma) -> "AlgebraElement":
        return AlgebraElement(self.backend, payload_delta(self.backend, self.payload, gamma))

    def alpha(self, t) -> "AlgebraElement":
        return AlgebraElement(self.backend, payload_alpha(self.backend, self.payload, t))

    def scalar_value(self) -> complex | None:
        return payload_scalar_value(self.backend, self.payload)

    def is_zero(self) -> bool:
        return not np.any(self.payload)

    def allclose(self, other: "AlgebraElement", atol: float = 1e-12) -> bool:
        self._check(other)
        return (self - other).norm() <= atol

    def key(self) -> tuple:
        """Hashable exact identity of the element."""
        return (self.backend, self.payload.tobytes())

    def __repr__(self):
        return f"AlgebraElement({self.backend.describe()}, {np.array2string(self.payload, precision=6)})"


def element(backend: AlgebraBackend, payload) -> AlgebraElement:
    return AlgebraElement(backend, payload)


def identity(backend: AlgebraBackend) -> AlgebraElement:
    return AlgebraElement(backend, payload_identity(backend))


def zero(backend: AlgebraBackend) -> AlgebraElement:
    return AlgebraElement(backend, payload_zero(backend))


def scalar_element(backend: AlgebraBackend, c: complex) -> AlgebraElement:
    return AlgebraElement(backend, payload_identity(backend) * complex(c))


def torus_monomial(backend: AlgebraBackend, k: Sequence[int], coef: complex = 1.0) -> AlgebraElement:
    """The nctorus element ``coef * U^k``."""
    if backend.kind != "nctorus":
        raise ValueError("torus monomials require the nctorus backend")
    p = np.zeros(backend.n_modes, dtype=complex)
    p[backend.mode_index(k)] = coef
    return AlgebraElement(backend, p)


def torus_generator(backend: AlgebraBackend, j: int) -> AlgebraElement:
    """The unitary generator ``U_j`` (1-based ``j``)."""
    k = [0] * backend.n
    k[j - 1] = 1
    return torus_monomial(backend, k)


def random_element(backend: AlgebraBackend, rng: np.random.Generator, decay: float = 0.5) -> AlgebraElement:
    """Random test element; nctorus coefficients decay like ``decay^|k|_1``."""
    shape = backend.elem_shape
    p = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if backend.kind == "nctorus":
        p = p * decay ** np.abs(backend.modes).sum(axis=1)
    return AlgebraElement(backend, p)


# ---------------------------------------------------------------------------
# operation-style API
# ---------------------------------------------------------------------------

def alg_ring(a: AlgebraElement, b: AlgebraElement, op: str) -> AlgebraElement:
    """Ring operation ``op`` in {"add", "mul"}."""
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown ring operation {op!r}")


def alg_adjoint(a: AlgebraElement) -> AlgebraElement:
    return a.adjoint()


def alg_norm(a: AlgebraElement) -> float:
    """Operator norm; for nctorus the norm of left multiplication on the band."""
    return a.norm()


def alg_inverse(a: AlgebraElement) -> AlgebraElement:
    return a.inverse()


def alg_delta(a: AlgebraElement, gamma) -> AlgebraElement:
    return a.delta(gamma)


def alg_alpha(a: AlgebraElement, t) -> AlgebraElement:
    return a.alpha(t)


def alg_trace_psi(a: AlgebraElement) -> complex:
    return a.trace()
