"""
Scenario configuration documents (YAML or JSON).

Example::

    version: 1
    backend: {kind: matrix, H: [[0, 0, 1]]}
    generators:
      v: [[1, 0.5, 0], [0.5, 2, 0], [0, 0, 3]]
    symbols:
      P: {order: 2, components: ["xi1^2", "0", "v"]}
    operator: P
    sector: {angles: [0.7853981633974483, 2.356194490192345], radii: [1, 100]}
    truncation: {N: 4, J: 6}
    power: 1

Errors carry the dotted field path and, when available, the line number.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .algebra import AlgebraElement, matrix_backend, nctorus_backend, scalar_backend
from .calculus import Sector, make_symbol
from .parser import ExprSyntaxError, parse_expr
from .quadrature import QuadratureSpec
from .symexpr import TwistMatrix

SUPPORTED_VERSIONS = (1,)
OUT_ENV = "TWISTED_PSIDO_OUT"
DEFAULT_OUT = "twisted-psido-out"


class ConfigError(ValueError):
    """Validation failure at ``path`` (dotted field path) and ``line``."""

    def __init__(self, path: str, message: str, line: int | None = None):
        where = path or "<document>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line
        self.detail = message


def _line_map(text: str) -> dict:
    """Map field paths to 1-based line numbers using the YAML node tree."""
    out: dict = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = str(k.value)
                walk(v, f"{path}.{key}" if path else key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    if root is not None:
        walk(root, "")
    return out


@dataclass
class FitSpec:
    radii: list
    rays: list | None
    oracle: str | None
    terms: int | None = None


@dataclass
class SchurSpec:
    kernel: str
    L: float
    G: int
    rate: float = 1.0
    symbol: str | None = None
    grid: int = 48


@dataclass
class ScenarioConfig:
    """Validated scenario."""

    version: int
    backend: object
    twist: TwistMatrix
    names: dict
    symbols: dict
    sources: dict
    sector: Sector | None
    N: int
    J: int
    k: int
    quad: QuadratureSpec
    operator: str | None
    weight: str | None
    compose: tuple | None
    adjoint: str | None
    fit: FitSpec | None
    schur: SchurSpec | None
    out_dir: str | None
    path: str | None = None


class _Reader:
    def __init__(self, text):
        self.lines = _line_map(text)

    def fail(self, path, msg):
        line = self.lines.get(path)
        if line is None and "." in path:
            line = self.lines.get(path.rsplit(".", 1)[0])
        raise ConfigError(path, msg, line)

    def num(self, value, path, integer=False, positive=False):
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms such as 1e-10 as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if integer and int(value) != value:
            self.fail(path, f"expected an integer, got {value!r}")
        if not math.isfinite(value):
            self.fail(path, "expected a finite number")
        if positive and value <= 0:
            self.fail(path, f"expected a positive value, got {value!r}")
        return int(value) if integer else float(value)

    def mapping(self, value, path):
        if not isinstance(value, dict):
            self.fail(path, f"expected a mapping, got {type(value).__name__}")
        return value

    def matrix(self, value, path, shape=None):
        if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
            self.fail(path, "expected a list of rows")
        for i, row in enumerate(value):
            for j, v in enumerate(row):
                if isinstance(v, bool) or not isinstance(v, (int, float, complex, str)):
                    self.fail(f"{path}[{i}][{j}]", f"expected a number, got {v!r}")
        try:
            arr = np.array([[complex(str(v).replace("i", "j")) if isinstance(v, str) else v for v in r]
                            for r in value], dtype=complex)
        except ValueError as exc:
            self.fail(path, f"bad matrix entry: {exc}")
        if arr.ndim != 2:
            self.fail(path, "rows have different lengths")
        if shape is not None and arr.shape != shape:
            self.fail(path, f"expected shape {shape}, got {arr.shape}")
        return arr


def _parse_backend(r: _Reader, d):
    d = r.mapping(d, "backend")
    kind = d.get("kind")
    if kind == "scalar":
        n = r.num(d.get("n", 1), "backend.n", integer=True, positive=True)
        return scalar_backend(n)
    if kind == "matrix":
        if "H" not in d:
            r.fail("backend", "matrix backend needs H (list of n diagonals)")
        H = d["H"]
        arr = r.matrix(H, "backend.H")
        if np.any(arr.imag != 0):
            r.fail("backend.H", "generator diagonals must be real")
        if "N" in d and r.num(d["N"], "backend.N", integer=True, positive=True) != arr.shape[1]:
            r.fail("backend.N", f"N={d['N']} does not match diagonal length {arr.shape[1]}")
        return matrix_backend(arr.real)
    if kind == "nctorus":
        if "theta" not in d or "K" not in d:
            r.fail("backend", "nctorus backend needs theta and K")
        th = r.matrix(d["theta"], "backend.theta")
        if th.shape[0] != th.shape[1]:
            r.fail("backend.theta", "theta must be square")
        bad = np.argwhere(np.abs(th + th.T) > 1e-14)
        if bad.size:
            i, j = bad[0]
            r.fail(f"backend.theta[{i}][{j}]", "theta is not skew-symmetric at this entry")
        K = r.num(d["K"], "backend.K", integer=True, positive=True)
        return nctorus_backend(th.real, K)
    r.fail("backend.kind", f"unknown backend kind {kind!r} (expected scalar, matrix or nctorus)")


def parse_config(document, path: str | None = None) -> ScenarioConfig:
    """Parse and validate a scenario document.

    Parameters
    ----------
    document : str or pathlib.Path
        YAML/JSON text, or a path to a file containing it.
    """
    if isinstance(document, Path) or (isinstance(document, str) and "\n" not in document
                                      and os.path.exists(document)):
        path = str(document)
        text = Path(document).read_text()
    else:
        text = str(document)
    r = _Reader(text)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("", f"malformed document: {exc}", mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ConfigError("", "the document must be a mapping")
    if "version" not in data:
        raise ConfigError("version", "required field 'version' is missing")
    version = r.num(data["version"], "version", integer=True)
    if version not in SUPPORTED_VERSIONS:
        r.fail("version", f"unsupported version {version} (supported: {SUPPORTED_VERSIONS})")
    if "backend" not in data:
        raise ConfigError("backend", "required field 'backend' is missing")
    bk = _parse_backend(r, data["backend"])
    n = bk.n

    twist = TwistMatrix.zeros(n)
    if data.get("twist") is not None:
        B = r.matrix(data["twist"], "twist", (n, n))
        if np.any(B.imag != 0):
            r.fail("twist", "twist entries must be real")
        bad = np.argwhere(np.abs(B.real + B.real.T) > 1e-14)
        if bad.size:
            i, j = bad[0]
            r.fail(f"twist[{i}][{j}]", f"twist is not skew-symmetric: B[{i}][{j}] = {float(B.real[i, j])!r} "
                                       f"but B[{j}][{i}] = {float(B.real[j, i])!r}")
        twist = TwistMatrix(B.real)

    names: dict = {}
    gens = data.get("generators") or {}
    r.mapping(gens, "generators")
    for name, val in gens.items():
        p = f"generators.{name}"
        if not str(name).isidentifier() or name in ("mu", "inv", "delta", "mat", "i", "U"):
            r.fail(p, f"invalid generator name {name!r}")
        if isinstance(val, str):
            try:
                e = parse_expr(val, bk, names)
            except (ExprSyntaxError, ValueError, ArithmeticError) as exc:
                r.fail(p, str(exc))
            if e.is_zero():
                names[name] = AlgebraElement(bk, np.zeros(bk.elem_shape, complex))
            elif e.kind != "coef":
                r.fail(p, "generator expressions must be constant (no xi or mu)")
            else:
                names[name] = e.args[0]
        elif bk.kind == "matrix":
            names[name] = AlgebraElement(bk, r.matrix(val, p, (bk.N, bk.N)))
        elif isinstance(val, (int, float)) and not isinstance(val, bool):
            names[name] = AlgebraElement(bk, np.asarray(val, complex) * np.asarray(
                1.0 if bk.kind == "scalar" else 0.0))
            if bk.kind != "scalar":
                r.fail(p, "use an expression string for non-scalar generators")
        else:
            r.fail(p, "expected an expression string or a matrix")

    N_default = 4
    trunc = r.mapping(data.get("truncation") or {}, "truncation")
    N = r.num(trunc.get("N", N_default), "truncation.N", integer=True, positive=True)
    J = r.num(trunc.get("J", N), "truncation.J", integer=True, positive=True)
    k = r.num(data.get("power", 1), "power", integer=True, positive=True)

    symbols: dict = {}
    sources: dict = {}
    syms = r.mapping(data.get("symbols") or {}, "symbols")
    for name, spec in syms.items():
        p = f"symbols.{name}"
        spec = r.mapping(spec, p)
        if "order" not in spec:
            r.fail(p, "symbol needs an 'order'")
        order = r.num(spec["order"], f"{p}.order")
        comps = spec.get("components")
        if isinstance(comps, str):
            comps = [comps]
        if not isinstance(comps, list) or not comps:
            r.fail(f"{p}.components", "expected a non-empty list of expression strings")
        exprs = []
        for i, c in enumerate(comps):
            try:
                exprs.append(parse_expr(str(c), bk, names))
            except (ExprSyntaxError, ValueError, ArithmeticError) as exc:
                r.fail(f"{p}.components[{i}]", str(exc))
        cutoff = spec.get("cutoff", False)
        interior = spec.get("interior", "zero")
        if interior not in ("zero", "formula"):
            r.fail(f"{p}.interior", "expected 'zero' or 'formula'")
        if isinstance(cutoff, list):
            cutoff = [bool(c) for c in cutoff]
        elif not isinstance(cutoff, bool):
            r.fail(f"{p}.cutoff", "expected a boolean or a list of booleans")
        try:
            if len(exprs) == 1 and spec.get("split", False):
                sym = make_symbol(exprs[0], order, None, twist, cutoff=cutoff, interior=interior)
            else:
                sym = make_symbol(exprs, order, max(len(exprs), 1), twist, cutoff=cutoff, interior=interior)
        except ValueError as exc:
            r.fail(f"{p}.components", str(exc))
        if sym.is_param:
            r.fail(f"{p}.components", "symbols in the document must be mu-free (classical)")
        symbols[name] = sym
        sources[name] = [str(c) for c in comps]

    sector = None
    if data.get("sector") is not None:
        s = r.mapping(data["sector"], "sector")
        ang = s.get("angles")
        if not isinstance(ang, list) or len(ang) != 2:
            r.fail("sector.angles", "expected [angle_min, angle_max]")
        a0 = r.num(ang[0], "sector.angles[0]")
        a1 = r.num(ang[1], "sector.angles[1]")
        rad = s.get("radii", [1.0, 100.0])
        if not isinstance(rad, list) or len(rad) != 2:
            r.fail("sector.radii", "expected [r_min, r_max]")
        r0 = r.num(rad[0], "sector.radii[0]", positive=True)
        r1 = r.num(rad[1], "sector.radii[1]", positive=True)
        try:
            sector = Sector(a0, a1, r0, r1)
        except ValueError as exc:
            r.fail("sector", str(exc))

    q = r.mapping(data.get("quadrature") or {}, "quadrature")
    try:
        quad = QuadratureSpec(
            rtol=r.num(q.get("rtol", 1e-8), "quadrature.rtol", positive=True),
            atol=r.num(q.get("atol", 1e-15), "quadrature.atol"),
            circle_points=r.num(q.get("circle_points", 64), "quadrature.circle_points", integer=True, positive=True),
            rays=r.num(q.get("rays", 5), "quadrature.rays", integer=True, positive=True),
            radii=r.num(q.get("radii", 6), "quadrature.radii", integer=True, positive=True))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        r.fail("quadrature", str(exc))

    def sym_ref(key):
        v = data.get(key)
        if v is None:
            return None
        if v not in symbols:
            r.fail(key, f"unknown symbol {v!r}")
        return v

    operator = sym_ref("operator")
    weight = sym_ref("weight")
    adjoint = sym_ref("adjoint")
    compose = None
    if data.get("compose") is not None:
        c = r.mapping(data["compose"], "compose")
        for side in ("left", "right"):
            if c.get(side) not in symbols:
                r.fail(f"compose.{side}", f"unknown symbol {c.get(side)!r}")
        compose = (c["left"], c["right"])

    fit = None
    if data.get("fit") is not None:
        fd = r.mapping(data["fit"], "fit")
        radii = fd.get("radii", [10, 20, 40, 80, 160])
        if not isinstance(radii, list) or len(radii) < 2:
            r.fail("fit.radii", "expected a list of at least two radii")
        radii = [r.num(v, f"fit.radii[{i}]", positive=True) for i, v in enumerate(radii)]
        rays = fd.get("rays")
        if rays is not None:
            rays = [r.num(v, f"fit.rays[{i}]") for i, v in enumerate(rays)]
        oracle = fd.get("oracle")
        if oracle is not None:
            try:
                parse_expr(str(oracle), bk, names)
            except (ExprSyntaxError, ValueError, ArithmeticError) as exc:
                r.fail("fit.oracle", str(exc))
        terms = fd.get("terms")
        if terms is not None:
            terms = r.num(terms, "fit.terms", integer=True)
        fit = FitSpec(radii, rays, None if oracle is None else str(oracle), terms)

    schur = None
    if data.get("schur") is not None:
        sd = r.mapping(data["schur"], "schur")
        kern = sd.get("kernel", "exp_abs")
        if kern not in ("exp_abs", "symbol"):
            r.fail("schur.kernel", "expected 'exp_abs' or 'symbol'")
        sym = sd.get("symbol")
        if kern == "symbol" and sym not in symbols:
            r.fail("schur.symbol", f"unknown symbol {sym!r}")
        schur = SchurSpec(kern, r.num(sd.get("L", 20.0), "schur.L", positive=True),
                          r.num(sd.get("G", 512), "schur.G", integer=True, positive=True),
                          r.num(sd.get("rate", 1.0), "schur.rate", positive=True), sym,
                          r.num(sd.get("grid", 48), "schur.grid", integer=True, positive=True))
        if schur.G < 2:
            r.fail("schur.G", "grid size must be >= 2")

    outs = r.mapping(data.get("outputs") or {}, "outputs")
    out_dir = outs.get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        r.fail("outputs.dir", "expected a path string")

    return ScenarioConfig(version, bk, twist, names, symbols, sources, sector, N, J, k, quad,
                          operator, weight, compose, adjoint, fit, schur, out_dir, path)


def resolve_out_dir(cli_out: str | None, cfg: ScenarioConfig | None) -> str:
    """``--out`` > document ``outputs.dir`` > ``$TWISTED_PSIDO_OUT`` > default."""
    if cli_out:
        return cli_out
    if cfg is not None and cfg.out_dir:
        return cfg.out_dir
    return os.environ.get(OUT_ENV) or DEFAULT_OUT
