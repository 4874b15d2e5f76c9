"""Shared builders for the test suite."""
import numpy as np

from twisted_psido import symexpr as sx
from twisted_psido.algebra import random_element


def _elem(bk, rng):
    a = random_element(bk, rng)
    if bk.kind == "nctorus":
        # nearest-neighbour support keeps short products inside the band
        mask = np.abs(bk.modes).max(axis=1) <= 1
        a = type(a)(bk, a.payload * mask)
    return a


def random_homogeneous(bk, rng, depth=2):
    """Random homogeneous expression built from coefficients, xi_j and |xi|^s."""
    def atom():
        r = rng.integers(0, 4)
        if r == 0:
            return sx.coef(_elem(bk, rng))
        if r == 1:
            return sx.xi_var(bk, int(rng.integers(1, bk.n + 1)))
        if r == 2:
            return sx.abs_xi(bk, float(rng.choice([-1.0, 0.5, 1.0, 2.0])))
        # |xi|^2 + c xi_1 |xi|, homogeneous of degree 2
        c = sx.add(sx.abs_xi(bk, 2.0), sx.mul(sx.coef(_elem(bk, rng) * 0.2), sx.xi_var(bk, 1),
                                              sx.abs_xi(bk, 1.0)))
        return c

    def build(d):
        if d == 0:
            return atom()
        a, b = build(d - 1), build(d - 1)
        if rng.random() < 0.6 or a.degree != b.degree:
            return sx.mul(a, b)
        return sx.add(a, b)

    e = build(depth)
    if rng.random() < 0.5:
        # invertible factor of degree -2
        s = sx.mul(sx.abs_xi(bk, 2.0), sx.add(sx.const(bk, 2.0), sx.mul(sx.coef(_elem(bk, rng) * 0.05),
                                                                       sx.abs_xi(bk, -1.0), sx.xi_var(bk, 1))))
        e = sx.mul(e, sx.inv(s))
    return e


def points(rng, n, count, rmin=1.0, rmax=2.0):
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.uniform(rmin, rmax, (count, 1))


def degree_parts(func, degrees, ts=None):
    """Split ``func(t) = sum_k c_k t^{d_k}`` into the ``c_k`` by a Vandermonde solve."""
    degrees = list(degrees)
    ts = np.linspace(1.0, 2.5, len(degrees)) if ts is None else np.asarray(ts)
    vals = np.array([np.asarray(func(t)) for t in ts])
    V = np.array([[t ** d for d in degrees] for t in ts])
    flat = vals.reshape(len(ts), -1)
    coef = np.linalg.solve(V, flat)
    return coef.reshape((len(degrees),) + vals.shape[1:])
