"""Recursive-descent parser for polynomial expressions.

Grammar: variables, rational or decimal literals, + - * / ^ and parentheses.
Division is only allowed by constants and ``^`` only takes non-negative
integer exponents, so every accepted expression is a polynomial with exact
rational coefficients.
"""

import re

from gmpy2 import mpq

from .poly import Poly


class ExprError(ValueError):
    def __init__(self, message, text="", column=None, line=None):
        self.message = message
        self.text = text
        self.column = column
        self.line = line
        where = ""
        if line is not None:
            where += f"line {line}, "
        if column is not None:
            where += f"column {column}: "
        super().__init__(where + message)


_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/^()]))")


def _tokenize(text):
    pos, out = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
            raise ExprError(f"unexpected character {text[col - 1]!r}", text, col)
        start = m.start(m.lastindex) + 1
        if m.group(1) is not None:
            num = m.group(1)
            if m.group(2):
                num += m.group(2)
            out.append(("num", mpq(num), start))
        elif m.group(3) is not None:
            out.append(("name", m.group(3), start))
        else:
            op = m.group(4)
            out.append(("op", "^" if op == "**" else op, start))
        pos = m.end()
    out.append(("end", None, len(text) + 1))
    return out


class _Parser:
    def __init__(self, text, resolve, nvars):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.resolve = resolve
        self.nvars = nvars

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExprError(msg, self.text, tok[2])

    def parse(self):
        p = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return p

    def expr(self):
        p = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self):
        p = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            tok = self.take()
            q = self.unary()
            if tok[1] == "*":
                p = p * q
            else:
                if q.degree() > 0:
                    self.fail("non-polynomial expression: division by a non-constant", tok)
                c = q.constant()
                if c == 0:
                    self.fail("division by zero", tok)
                p = p.scale(1 / c)
        return p

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return -self.unary()
        if self.peek()[:2] == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            tok = self.take()
            ex = self.unary()
            c = ex.constant()
            if ex.degree() > 0 or c != int(c) or c < 0:
                self.fail("non-polynomial expression: exponent must be a non-negative integer", tok)
            base = base ** int(c)
        return base

    def atom(self):
        tok = self.take()
        kind, val, _ = tok
        if kind == "num":
            return Poly.const(self.nvars, val)
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                self.fail(f"non-polynomial expression: function call {val!r}", tok)
            p = self.resolve(val)
            if p is None:
                self.fail(f"unknown variable {val!r}", tok)
            return p
        if (kind, val) == ("op", "("):
            p = self.expr()
            if self.peek()[:2] != ("op", ")"):
                self.fail("expected ')'")
            self.take()
            return p
        self.fail("unexpected end of expression" if kind == "end" else f"unexpected token {val!r}", tok)


def parse_poly(text, names):
    """Parse ``text`` as a polynomial in the variables ``names``."""
    index = {n: i for i, n in enumerate(names)}
    nv = len(names)
    return parse_with(text, lambda n: Poly.var(nv, index[n]) if n in index else None, nv)


def parse_with(text, resolve, nvars):
    if not isinstance(text, str):
        if isinstance(text, (int, float)):
            text = repr(text)
        else:
            raise ExprError(f"expected an expression string, got {type(text).__name__}")
    return _Parser(text, resolve, nvars).parse()
