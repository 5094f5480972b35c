"""Sparse multivariate polynomials with duck-typed coefficients.

Coefficients may be gmpy2 rationals, quadratic surds, floats or complex
numbers; the class only relies on ring operations and on ``c == 0``.
"""

from gmpy2 import mpc, mpfr, mpq


_MPFR = type(mpfr(0))
_MPC = type(mpc(0))


def demote(c):
    """Mixed mpq/float arithmetic yields mpfr (53-bit): return a plain float."""
    t = type(c)
    if t is _MPFR:
        return float(c)
    if t is _MPC:
        return complex(c)
    return c


def demote_dict(d):
    for e, c in d.items():
        t = type(c)
        if t is _MPFR or t is _MPC:
            d[e] = demote(c)
    return d


def is_exact(c):
    return not isinstance(c, (float, complex))


def to_float(c):
    if isinstance(c, complex):
        return c
    return float(c)


class Poly:
    """Polynomial in ``nvars`` variables stored as {exponent tuple: coeff}."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars, terms=None):
        self.nvars = nvars
        self.terms = {}
        if terms:
            for e, c in terms.items():
                if c != 0:
                    self.terms[tuple(e)] = demote(c)

    @classmethod
    def const(cls, nvars, c):
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def var(cls, nvars, i, c=1):
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): mpq(c) if isinstance(c, int) else c})

    @classmethod
    def monomial(cls, exps, c=1):
        return cls(len(exps), {tuple(exps): mpq(c) if isinstance(c, int) else c})

    def copy(self):
        p = Poly(self.nvars)
        p.terms = dict(self.terms)
        return p

    def is_zero(self):
        return not self.terms

    def __bool__(self):
        return bool(self.terms)

    def degree(self):
        return max((sum(e) for e in self.terms), default=-1)

    def valuation(self):
        return min((sum(e) for e in self.terms), default=None)

    def constant(self):
        return self.terms.get((0,) * self.nvars, 0)

    def _lift(self, other):
        if isinstance(other, Poly):
            if other.nvars != self.nvars:
                raise ValueError("variable count mismatch")
            return other
        if isinstance(other, int):
            other = mpq(other)
        return Poly.const(self.nvars, other)

    def __add__(self, other):
        other = self._lift(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            v = out.get(e, 0) + c
            if v == 0:
                out.pop(e, None)
            else:
                out[e] = v
        p = Poly(self.nvars)
        p.terms = demote_dict(out)
        return p

    __radd__ = __add__

    def __neg__(self):
        p = Poly(self.nvars)
        p.terms = {e: -c for e, c in self.terms.items()}
        return p

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def scale(self, c):
        if c == 0:
            return Poly(self.nvars)
        p = Poly(self.nvars)
        p.terms = demote_dict({e: v * c for e, v in self.terms.items()})
        return p

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return self.scale(mpq(other) if isinstance(other, int) else other)
        if other.nvars != self.nvars:
            raise ValueError("variable count mismatch")
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Poly(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers")
        out = Poly.const(self.nvars, mpq(1))
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other):
        if not isinstance(other, Poly):
            other = self._lift(other)
        return (self - other).is_zero()

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def diff(self, i, k=1):
        out = {}
        for e, c in self.terms.items():
            if e[i] < k:
                continue
            f = 1
            for j in range(k):
                f *= e[i] - j
            e2 = list(e)
            e2[i] -= k
            out[tuple(e2)] = c * f
        return Poly(self.nvars, out)

    def truncate(self, maxdeg):
        p = Poly(self.nvars)
        p.terms = {e: c for e, c in self.terms.items() if sum(e) <= maxdeg}
        return p

    def homogeneous(self, deg):
        p = Poly(self.nvars)
        p.terms = {e: c for e, c in self.terms.items() if sum(e) == deg}
        return p

    def map_coeffs(self, f):
        return Poly(self.nvars, {e: f(c) for e, c in self.terms.items()})

    def to_float(self):
        return self.map_coeffs(to_float)

    def is_exact(self):
        return all(is_exact(c) for c in self.terms.values())

    def __call__(self, *point):
        if len(point) == 1 and self.nvars != 1:
            point = tuple(point[0])
        return self.evaluate(point)

    def evaluate(self, point):
        """Value at ``point``; entries may be numbers or numpy arrays."""
        if len(point) != self.nvars:
            raise ValueError("point has wrong dimension")
        total = 0
        for e, c in self.terms.items():
            term = c
            for x, k in zip(point, e):
                if k:
                    term = term * x ** k
            total = total + term
        return total

    def compose(self, subs):
        """Substitute polynomials (all in a common ring) for the variables."""
        if len(subs) != self.nvars:
            raise ValueError("need one substitution per variable")
        target = subs[0].nvars if subs else 0
        powers = [{0: Poly.const(target, mpq(1))} for _ in subs]

        def pw(i, k):
            cache = powers[i]
            if k not in cache:
                cache[k] = pw(i, k - 1) * subs[i]
            return cache[k]

        out = Poly(target)
        for e, c in self.terms.items():
            term = Poly.const(target, c)
            for i, k in enumerate(e):
                if k:
                    term = term * pw(i, k)
            out = out + term
        return out

    def extend(self, nvars, positions):
        """Embed into a ring with more variables; variable i goes to positions[i]."""
        out = {}
        for e, c in self.terms.items():
            e2 = [0] * nvars
            for i, k in enumerate(e):
                e2[positions[i]] += k
            out[tuple(e2)] = c
        return Poly(nvars, out)

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda t: (sum(t[0]), tuple(-x for x in t[0])))

    def to_string(self, names=None):
        names = names or [f"q{i + 1}" for i in range(self.nvars)]
        if not self.terms:
            return "0"
        parts = []
        for e, c in self.sorted_terms():
            mono = "*".join(n if k == 1 else f"{n}^{k}" for n, k in zip(names, e) if k)
            parts.append(f"({c})*{mono}" if mono else f"({c})")
        return " + ".join(parts)

    def __repr__(self):
        return f"Poly({self.to_string()})"
