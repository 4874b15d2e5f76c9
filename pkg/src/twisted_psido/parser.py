"""
Expression grammar for symbol definitions.

::

    expr    := term (('+' | '-') term)*
    term    := unary ('*' unary)*
    unary   := '-' unary | power
    power   := atom ('^' signed_number)?
    atom    := number | number 'i' | 'i' | '(' expr ')'
             | 'xi' DIGITS | '|xi|' | 'mu'
             | 'inv' '(' expr ')'
             | 'delta' '[' ints ']' '(' expr ')'
             | 'U' '[' ints ']'                (nctorus monomial)
             | 'mat' '(' python-list-literal ')' (matrix literal)
             | NAME                            (named generator)

Powers of ``xi_j`` must be nonnegative integers; ``|xi|`` and ``mu`` accept
real exponents; any other base takes an integer exponent (negative means
the inverse power).
"""
from __future__ import annotations

import ast
import re

import numpy as np

from . import symexpr as sx
from .algebra import AlgebraBackend, AlgebraElement, scalar_element, torus_monomial


class ExprSyntaxError(ValueError):
    """Raised on a malformed expression; ``pos`` is the character offset."""

    def __init__(self, message, text, pos):
        super().__init__(f"{message} at position {pos} in {text!r}")
        self.pos = pos
        self.text = text


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<absxi>\|\s*xi\s*\|)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?(?:i(?![A-Za-z0-9_]))?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*^()\[\],])
""", re.VERBOSE)


def _tokenize(text):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text, backend, names):
        self.text = text
        self.bk = backend
        self.names = names
        self.toks = _tokenize(text)
        self.i = 0

    # helpers
    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value):
        t = self.next()
        if t[1] != value:
            raise ExprSyntaxError(f"expected {value!r}, found {t[1] or 'end of input'!r}", self.text, t[2])
        return t

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(msg, self.text, tok[2])

    # grammar
    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected {self.peek()[1]!r}")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            t = self.term()
            e = sx.add(e, t) if op == "+" else sx.sub(e, t)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] == "*":
            self.next()
            e = sx.mul(e, self.unary())
        return e

    def unary(self):
        if self.peek()[1] == "-":
            self.next()
            return sx.neg(self.unary())
        if self.peek()[1] == "+":
            self.next()
            return self.unary()
        return self.power()

    def signed_number(self):
        sign = 1.0
        while self.peek()[1] in ("+", "-"):
            if self.next()[1] == "-":
                sign = -sign
        t = self.next()
        if t[0] != "num" or t[1].endswith("i"):
            self.error("expected a real exponent", t)
        return sign * float(t[1])

    def power(self):
        start = self.peek()
        base, kind = self.atom()
        if self.peek()[1] != "^":
            return base
        tok = self.next()
        p = self.signed_number()
        if kind == "xi":
            if p != int(p) or p < 0:
                self.error("xi powers must be nonnegative integers", tok)
            beta = np.array(base.args) * int(p)
            return sx.xi_mono(self.bk, beta)
        if kind == "absxi":
            return sx.abs_xi(self.bk, p)
        if kind == "mu":
            return sx.mu_pow(self.bk, p)
        if p != int(p):
            self.error(f"non-integer power of {start[1]!r}", tok)
        p = int(p)
        if p == 0:
            return sx.one(self.bk)
        f = base if p > 0 else sx.inv(base)
        return sx.mul(*([f] * abs(p)))

    def int_list(self):
        self.expect("[")
        vals = []
        while True:
            sign = 1
            while self.peek()[1] in ("+", "-"):
                if self.next()[1] == "-":
                    sign = -sign
            t = self.next()
            if t[0] != "num" or not t[1].isdigit():
                self.error("expected an integer", t)
            vals.append(sign * int(t[1]))
            if self.peek()[1] == ",":
                self.next()
                continue
            self.expect("]")
            return vals

    def atom(self):
        t = self.next()
        kind, val, pos = t
        bk = self.bk
        if kind == "num":
            if val.endswith("i"):
                return sx.const(bk, 1j * float(val[:-1])), "num"
            return sx.const(bk, float(val)), "num"
        if kind == "absxi":
            return sx.abs_xi(bk, 1.0), "absxi"
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e, "paren"
        if kind != "name":
            self.error(f"unexpected {val or 'end of input'!r}", t)
        m = re.fullmatch(r"xi(\d+)", val)
        if m:
            j = int(m.group(1))
            if not 1 <= j <= bk.n:
                self.error(f"{val} out of range for n={bk.n}", t)
            return sx.xi_var(bk, j), "xi"
        if val == "i":
            return sx.const(bk, 1j), "num"
        if val == "mu":
            return sx.mu_pow(bk, 1.0), "mu"
        if val == "inv":
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return sx.inv(e), "inv"
        if val == "delta":
            gamma = self.int_list()
            if len(gamma) != bk.n or min(gamma) < 0:
                self.error(f"delta index must have {bk.n} nonnegative entries", t)
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return sx.expr_delta(e, gamma), "delta"
        if val == "U" and self.peek()[1] == "[":
            if bk.kind != "nctorus":
                self.error("U[...] monomials need the nctorus backend", t)
            k = self.int_list()
            try:
                return sx.coef(torus_monomial(bk, k)), "gen"
            except (IndexError, ValueError) as exc:
                self.error(str(exc), t)
        if val == "mat" and self.peek()[1] == "(":
            return self.matrix_literal(t), "gen"
        if val in self.names:
            return sx.coef(self.names[val]), "gen"
        self.error(f"unknown name {val!r}", t)

    def matrix_literal(self, tok):
        if self.bk.kind != "matrix":
            self.error("mat(...) literals need the matrix backend", tok)
        # take the balanced bracket text verbatim
        open_tok = self.next()
        start = open_tok[2] + 1
        depth = 1
        while depth:
            t = self.next()
            if t[0] == "end":
                self.error("unterminated mat(...)", tok)
            depth += t[1] == "("
            depth -= t[1] == ")"
        end = self.toks[self.i - 1][2]
        src = self.text[start:end].replace("i", "j") if "j" not in self.text[start:end] else self.text[start:end]
        try:
            arr = np.array(ast.literal_eval(src), dtype=complex)
        except (ValueError, SyntaxError) as exc:
            self.error(f"bad matrix literal: {exc}", tok)
        if arr.shape != self.bk.elem_shape:
            self.error(f"matrix literal has shape {arr.shape}, expected {self.bk.elem_shape}", tok)
        return sx.coef(AlgebraElement(self.bk, arr))


def parse_expr(text: str, backend: AlgebraBackend, names: dict | None = None) -> sx.Expr:
    """Parse ``text`` into a canonical expression.

    Parameters
    ----------
    text : str
    backend : AlgebraBackend
    names : dict, optional
        Named algebra elements (``str -> AlgebraElement``) usable as atoms.
    """
    names = dict(names or {})
    for k, v in names.items():
        if not isinstance(v, AlgebraElement):
            names[k] = scalar_element(backend, v)
    return _Parser(str(text), backend, names).parse()
