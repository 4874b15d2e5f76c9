"""
Command-line front end.

Usage::

    twisted-psido <command> --config <path> [--out <dir>] [--threads <k>] [--seed <u64>]

Commands: compose, adjoint, parametrix, trace-expansion, schur, verify.
Artifacts (JSON/CSV) go to ``--out``, else the document's ``outputs.dir``,
else ``$TWISTED_PSIDO_OUT``, else ``./twisted-psido-out``.  Every number is
written with 17 significant digits.  Failures exit nonzero and print a JSON
object to stderr (also saved as ``failure.json`` when the output directory
is writable).
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import symexpr as sx
from .bounded import discretized_opnorm, kernel_from_symbol, kernel_grid, schur_bound
from .calculus import PolyhomSymbol, adjoint_expand, ellipticity_check, parametrix, sharp_compose
from .config import ConfigError, ScenarioConfig, parse_config, resolve_out_dir
from .parser import parse_expr
from .trace_asym import expansion_fit, trace_expansion_full, trace_quadrature_oracle
from . import verify as vf

COMMANDS = ("compose", "adjoint", "parametrix", "trace-expansion", "schur", "verify")
EXIT_OK, EXIT_CHECKS_FAILED, EXIT_CONFIG, EXIT_COMPUTE = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# deterministic serialization
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    """17 significant digits; complex as ``a+bi``."""
    if isinstance(x, (complex, np.complexfloating)):
        x = complex(x)
        sign = "+" if x.imag >= 0 or math.isnan(x.imag) else "-"
        return f"{fmt(x.real)}{sign}{fmt(abs(x.imag))}i"
    return format(float(x) + 0.0, ".17g")


def _json(obj, indent=0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt(x) if math.isfinite(x) else f'"{fmt(x)}"'
    if isinstance(obj, (complex, np.complexfloating)):
        return _json({"real": complex(obj).real, "imag": complex(obj).imag}, indent)
    if isinstance(obj, str):
        import json
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json(str(k))}: {_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, (bool, complex, np.complexfloating))
               for v in seq):
            return "[" + ", ".join(_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON text (insertion-ordered keys, 17-digit numbers)."""
    return _json(obj) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([fmt(v) if isinstance(v, (float, np.floating, complex)) else v for v in r])
    return buf.getvalue()


class _Writer:
    def __init__(self, out_dir: str, stream):
        self.dir = Path(out_dir)
        self.stream = stream
        self.files: list = []

    def write(self, name: str, text: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / name).write_text(text, encoding="utf-8")
        self.files.append(name)

    def say(self, line: str = ""):
        print(line, file=self.stream)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def symbol_json(f: PolyhomSymbol) -> dict:
    comps = []
    for j, c in enumerate(f.components):
        comps.append({"j": j, "degree": c.degree, "global": c.is_global, "interior": c.interior,
                      "nodes": sx.count_nodes(c.expr), "expr": sx.print_expr(c.expr)})
    return {"order": f.order, "weight": f.weight, "param": f.is_param, "N": f.N, "components": comps}


def _symbol_csv(f: PolyhomSymbol) -> str:
    rows = [[j, fmt(c.degree), str(c.is_global).lower(), sx.count_nodes(c.expr), sx.print_expr(c.expr)]
            for j, c in enumerate(f.components)]
    return _csv(["j", "degree", "global", "nodes", "expr"], rows)


def _header(cfg: ScenarioConfig, command: str) -> dict:
    return {"command": command, "version": cfg.version, "backend": cfg.backend.to_dict(),
            "twist": cfg.twist.B.tolist(), "N": cfg.N}


def _need(cfg, attr, path, what):
    v = getattr(cfg, attr)
    if v is None:
        raise ConfigError(path, f"the {what} command needs '{path}'")
    return v


def _int_order(f: PolyhomSymbol, path: str) -> int:
    m = f.order
    if m < 1 or m != int(m):
        raise ConfigError(path, f"the operator order must be a positive integer, got {m!r}")
    return int(m)


def cmd_compose(cfg, w: _Writer, threads: int, seed: int) -> int:
    left, right = _need(cfg, "compose", "compose", "compose")
    s = sharp_compose(cfg.symbols[left], cfg.symbols[right], cfg.N)
    w.write("compose.json", dumps({**_header(cfg, "compose"), "left": left, "right": right,
                                   "symbol": symbol_json(s)}))
    w.write("compose.csv", _symbol_csv(s))
    w.say(f"compose {left} # {right}: order {fmt(s.order)}, {s.N} components")
    for j, c in enumerate(s.components):
        w.say(f"  [{j}] degree {fmt(c.degree)}: {sx.print_expr(c.expr)}")
    return EXIT_OK


def cmd_adjoint(cfg, w: _Writer, threads: int, seed: int) -> int:
    name = cfg.adjoint or cfg.operator
    if name is None:
        raise ConfigError("adjoint", "the adjoint command needs 'adjoint' (or 'operator')")
    s = adjoint_expand(cfg.symbols[name], cfg.N)
    w.write("adjoint.json", dumps({**_header(cfg, "adjoint"), "symbol_name": name, "symbol": symbol_json(s)}))
    w.write("adjoint.csv", _symbol_csv(s))
    w.say(f"adjoint of {name}: {s.N} components")
    for j, c in enumerate(s.components):
        w.say(f"  [{j}] degree {fmt(c.degree)}: {sx.print_expr(c.expr)}")
    return EXIT_OK


def cmd_parametrix(cfg, w: _Writer, threads: int, seed: int) -> int:
    name = _need(cfg, "operator", "operator", "parametrix")
    sector = _need(cfg, "sector", "sector", "parametrix")
    f = cfg.symbols[name]
    m = _int_order(f, f"symbols.{name}.order")
    rep = ellipticity_check(f, m, sector)
    if not rep.passed:
        w.write("parametrix.json", dumps({**_header(cfg, "parametrix"), "operator": name,
                                          "ellipticity": rep.to_dict()}))
        raise RuntimeError(f"operator {name} is not elliptic with parameter on the sector: {rep.failure}")
    g = parametrix(f, m, cfg.N, sector, check=False)
    w.write("parametrix.json", dumps({**_header(cfg, "parametrix"), "operator": name, "m": m,
                                      "sector": sector.to_dict(), "ellipticity": rep.to_dict(),
                                      "symbol": symbol_json(g)}))
    w.write("parametrix.csv", _symbol_csv(g))
    w.say(f"parametrix of {name} - mu^{m}: {g.N} components, worst condition {fmt(rep.worst_condition)}")
    for j, c in enumerate(g.components):
        w.say(f"  [{j}] degree {fmt(c.degree)}: {sx.print_expr(c.expr)}")
    return EXIT_OK


def _fit_mus(cfg):
    fit = cfg.fit
    angles = fit.rays if fit.rays is not None else [0.5 * (cfg.sector.angle_min + cfg.sector.angle_max)]
    return np.array([r * np.exp(1j * a) for a in angles for r in fit.radii])


def cmd_trace_expansion(cfg, w: _Writer, threads: int, seed: int) -> int:
    name = _need(cfg, "operator", "operator", "trace-expansion")
    sector = _need(cfg, "sector", "sector", "trace-expansion")
    f = cfg.symbols[name]
    m = _int_order(f, f"symbols.{name}.order")
    a = cfg.symbols[cfg.weight] if cfg.weight else None
    e = trace_expansion_full(a, f, m, cfg.k, cfg.J, sector, cfg.quad, threads=threads)
    w.write("trace_expansion_mu.csv", e.to_csv("mu"))
    w.write("trace_expansion_lambda.csv", e.to_csv("lambda"))
    doc = {**_header(cfg, "trace-expansion"), "operator": name, "weight": cfg.weight, **e.to_json()}
    if cfg.fit is not None:
        if cfg.fit.oracle is None:
            raise ConfigError("fit.oracle", "a fit needs an oracle expression")
        s = parse_expr(cfg.fit.oracle, cfg.backend, cfg.names)
        mus = _fit_mus(cfg)
        rep = expansion_fit(e, lambda mu: trace_quadrature_oracle(s, mu, cfg.quad), mus,
                            cfg.fit.terms, threads=threads)
        w.write("trace_fit.csv", rep.to_csv())
        doc["fit"] = {"oracle": cfg.fit.oracle,
                      "steps": [{"terms": t, "slopes": rep.slopes[t], "predicted": rep.predicted[t]}
                                for t in range(len(rep.slopes))]}
    w.write("trace_expansion.json", dumps(doc))
    w.say(f"trace expansion of {'A ' if a is not None else ''}({name} - lambda)^-{cfg.k}, "
          f"lambda = mu^{m}, J = {cfg.J}")
    w.say("  mu-exponent  coefficient  log-coefficient")
    for ex, c, cl in e.nonzero():
        w.say(f"  {fmt(ex)}  {fmt(c)}  {fmt(cl)}")
    if "fit" in doc:
        for st in doc["fit"]["steps"]:
            w.say(f"  fit after {st['terms']} terms: slopes {[fmt(s) for s in st['slopes']]}"
                  f" predicted {fmt(st['predicted']) if st['predicted'] is not None else '-'}")
    return EXIT_OK


def _schur_grid(cfg):
    sp = cfg.schur
    if sp.kernel == "exp_abs":
        rate = sp.rate
        return kernel_grid(lambda x, y: np.exp(-rate * np.abs(x - y)), sp.L, sp.G), "exp_abs"
    f = cfg.symbols[sp.symbol]
    bk = f.backend
    x = np.linspace(-sp.L, sp.L, sp.G)
    vals = np.zeros((sp.G, sp.G) + bk.elem_shape, dtype=complex)
    for i, xi in enumerate(x):
        for j, yj in enumerate(x):
            vals[i, j] = kernel_from_symbol(f, xi, yj).payload
    return kernel_grid(lambda X, Y: vals, sp.L, sp.G, backend=bk), f"symbol:{sp.symbol}"


def cmd_schur(cfg, w: _Writer, threads: int, seed: int) -> int:
    _need(cfg, "schur", "schur", "schur")
    kg, label = _schur_grid(cfg)
    res = schur_bound(kg)
    measured = discretized_opnorm(kg)
    dom = measured <= res.bound
    w.write("schur.json", dumps({**_header(cfg, "schur"), "kernel": label, "L": kg.L, "G": kg.G,
                                 **res.to_dict(), "measured": measured, "dominance": dom}))
    wts = kg.weights
    rows = [[x, r, c] for x, r, c in zip(kg.x, kg.norms @ (kg.q * wts), (kg.p * wts) @ kg.norms)]
    w.write("schur.csv", _csv(["x", "row_integral", "column_integral"], rows))
    w.say(f"schur {label} on [-{fmt(kg.L)}, {fmt(kg.L)}], G = {kg.G}")
    w.say(f"  alpha {fmt(res.alpha)}  beta {fmt(res.beta)}")
    w.say(f"  bound 4 sqrt(alpha beta) = {fmt(res.bound)}")
    w.say(f"  measured norm {fmt(measured)}")
    w.say(f"  dominance: {'pass' if dom else 'FAIL'}")
    return EXIT_OK if dom else EXIT_CHECKS_FAILED


def collect_checks(cfg: ScenarioConfig, rng: np.random.Generator, threads: int = 1) -> list:
    """The property checks relevant to ``cfg``, in a fixed order."""
    checks = list(vf.check_algebra(cfg.backend, rng))
    for name, f in cfg.symbols.items():
        checks.append(vf.check_homogeneity(name, f, rng))
        checks.append(vf.check_dxi(name, f, rng))
        checks.append(vf.check_adjoint_involution(name, f, rng))
    if cfg.compose is not None:
        L, R = (cfg.symbols[k] for k in cfg.compose)
        checks.append(vf.check_twist_independence(L, R, cfg.twist, rng))
        checks.append(vf.check_associativity(L, R, rng))
    if cfg.operator is not None and cfg.sector is not None:
        f = cfg.symbols[cfg.operator]
        m = _int_order(f, f"symbols.{cfg.operator}.order")
        par = vf.check_parametrix(f, m, cfg.N, cfg.sector, rng)
        checks.extend(par)
        a = cfg.symbols[cfg.weight] if cfg.weight else None
        order_a = a.order if a is not None else 0.0
        if all(c.passed for c in par) and -cfg.k * m + order_a < -cfg.backend.n:
            units = cfg.sector.units(min(cfg.quad.rays, 5))
            exps = [trace_expansion_full(a, f, m, cfg.k, cfg.J, cfg.sector, cfg.quad, threads, unit=u)
                    for u in units]
            checks.append(vf.check_arg_independence(exps))
            if cfg.fit is not None and cfg.fit.oracle is not None:
                s = parse_expr(cfg.fit.oracle, cfg.backend, cfg.names)
                rep = expansion_fit(exps[0], lambda mu: trace_quadrature_oracle(s, mu, cfg.quad),
                                    _fit_mus(cfg), cfg.fit.terms, threads)
                worst = max((rep.deviation(t) for t in range(1, len(rep.slopes))
                             if rep.predicted[t] is not None), default=0.0)
                checks.append(vf.CheckResult("expansion fit slopes", worst <= 0.2, worst, 0.2))
    if cfg.schur is not None:
        kg, _ = _schur_grid(cfg)
        checks.extend(vf.check_schur(kg))
    return checks


def cmd_verify(cfg, w: _Writer, threads: int, seed: int) -> int:
    rng = np.random.default_rng(seed)
    checks = collect_checks(cfg, rng, threads)
    ok = all(c.passed for c in checks)
    w.write("verify.json", dumps({**_header(cfg, "verify"), "seed": seed, "passed": ok,
                                  "checks": [c.to_dict() for c in checks]}))
    width = max(len(c.name) for c in checks) + 1
    w.say(f"{'check':<{width + 6}} value (tol)")
    for c in checks:
        status = "pass" if c.passed else "FAIL"
        label = f"{c.name}: {status}"
        w.say(f"{label:<{width + 6}} {fmt(c.value)} ({fmt(c.tol)}){'  ' + c.detail if c.detail else ''}")
    w.say(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return EXIT_OK if ok else EXIT_CHECKS_FAILED


_DISPATCH = {"compose": cmd_compose, "adjoint": cmd_adjoint, "parametrix": cmd_parametrix,
             "trace-expansion": cmd_trace_expansion, "schur": cmd_schur, "verify": cmd_verify}


def run_scenario(cfg: ScenarioConfig, command: str, out_dir: str | None = None, threads: int = 1,
                 seed: int = 0, stream=None) -> int:
    """Run ``command`` on ``cfg``; returns the exit status.  Exceptions propagate."""
    if command not in _DISPATCH:
        raise ValueError(f"unknown command {command!r}")
    w = _Writer(resolve_out_dir(out_dir, cfg), stream or sys.stdout)
    return _DISPATCH[command](cfg, w, max(1, int(threads)), int(seed))


def failure_document(exc: BaseException, command: str | None) -> dict:
    doc = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        doc["field"] = exc.path
        doc["line"] = exc.line
        doc["detail"] = exc.detail
    return doc


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("thread count must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twisted-psido",
                                description="Symbol calculus and resolvent-trace asymptotics "
                                            "for twisted pseudodifferential multipliers.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="scenario document (YAML or JSON)")
    p.add_argument("--out", default=None, help="output directory (overrides $TWISTED_PSIDO_OUT)")
    p.add_argument("--threads", type=_positive, default=1, help="worker threads (default 1)")
    p.add_argument("--seed", type=_u64, default=0, help="seed for randomized checks (default 0)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = None
    try:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {args.config}: {exc.strerror}") from None
        cfg = parse_config(text, path=args.config)
        return run_scenario(cfg, args.command, args.out, args.threads, args.seed)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON report
        doc = failure_document(exc, args.command)
        if not isinstance(exc, ConfigError):
            doc["traceback"] = traceback.format_exception_only(type(exc), exc)[-1].strip()
        text = dumps(doc)
        sys.stderr.write(text)
        try:
            out = Path(resolve_out_dir(args.out, cfg))
            out.mkdir(parents=True, exist_ok=True)
            (out / "failure.json").write_text(text, encoding="utf-8")
        except OSError:
            pass
        return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
