"""Truncated graded formal series with the Weyl (Moyal) star product.

Two algebras are provided.

E1(s, k): base variables (y, eta, t), fibre variables (x, xi, tau) and the
semiclassical parameter hbar.  Conjugate pairs (eta, y), (xi, x), (tau, t)
all carry hbar.  Degree = |x| + |xi| + |tau| + 2*(power of hbar).

E2(s, k): base variables w = (y, eta), fibre variables (t, tau~) and the
parameter h = sqrt(hbar).  The pair (tau~, t) carries h, the pair (eta, y)
carries h**2.  Degree = |t| + |tau~| + 2*(power of h).

A series stores its real and imaginary parts as two flat dictionaries
{exponent tuple: coefficient}.  Monomials are kept when the fibre degree is
at most N_max and the base degree plus the fibre degree is at most
N_max + T_max.  Both conditions cut out two-sided ideals (no star-product
term lowers either weight), so the truncated product is exactly
associative.  A plain base-degree cut would not be: base derivatives in the
product lower the base degree.
"""

import itertools
import math
import random
from dataclasses import dataclass
from functools import lru_cache

from gmpy2 import mpq

from .errors import AlgebraError
from .poly import Poly, demote, demote_dict, is_exact

HALF = mpq(1, 2)


@dataclass(frozen=True)
class Algebra:
    tag: str
    s: int
    k: int

    @property
    def names(self):
        s, k = self.s, self.k
        y = [f"y{j + 1}" for j in range(s)]
        eta = [f"eta{j + 1}" for j in range(s)]
        if self.tag == "E1":
            t = [f"t{j + 1}" for j in range(k)]
            x = [f"x{j + 1}" for j in range(s)]
            xi = [f"xi{j + 1}" for j in range(s)]
            tau = [f"tau{j + 1}" for j in range(k)]
            return y + eta + t + x + xi + tau + ["hbar"]
        t = [f"t{j + 1}" for j in range(k)]
        tt = [f"tt{j + 1}" for j in range(k)]
        return y + eta + t + tt + ["h"]

    @property
    def nvars(self):
        return len(self.names)

    @property
    def nbase(self):
        return 2 * self.s + (self.k if self.tag == "E1" else 0)

    @property
    def param(self):
        return self.nvars - 1

    def index(self, name):
        return self.names.index(name)

    @property
    def weights(self):
        w = [0] * self.nbase + [1] * (self.nvars - 1 - self.nbase) + [2]
        return tuple(w)

    @property
    def pairs(self):
        """(momentum index, position index, parameter power) per pair."""
        s, k = self.s, self.k
        out = [(s + j, j, 1 if self.tag == "E1" else 2) for j in range(s)]
        if self.tag == "E1":
            b = 2 * s + k
            out += [(b + s + j, b + j, 1) for j in range(s)]
            out += [(b + 2 * s + j, 2 * s + j, 1) for j in range(k)]
        else:
            b = 2 * s
            out += [(b + k + j, b + j, 1) for j in range(k)]
        return tuple(out)

    @property
    def oscillators(self):
        """(position, momentum) index pairs of the harmonic oscillators."""
        if self.tag == "E1":
            b = 2 * self.s + self.k
            return tuple((b + j, b + self.s + j) for j in range(self.s))
        b = 2 * self.s
        return tuple((b + j, b + self.k + j) for j in range(self.k))

    @property
    def base_names(self):
        return self.names[:self.nbase]


def E1(s, k):
    return Algebra("E1", s, k)


def E2(s, k):
    return Algebra("E2", s, k)


def _clean(d):
    return {e: c for e, c in d.items() if c != 0}


class GradedSeries:
    """Element of E1 or E2 truncated at (N_max, T_max); immutable by convention."""

    __slots__ = ("alg", "N", "T", "re", "im", "_w")

    def __init__(self, alg, N, T=None, re=None, im=None):
        self.alg = alg
        self.N = N
        self.T = N if T is None else T
        self._w = alg.weights
        self.re = {}
        self.im = {}
        for src, dst in ((re, self.re), (im, self.im)):
            if src:
                for e, c in src.items():
                    e = tuple(e)
                    if c != 0 and self.keeps(e):
                        dst[e] = demote(c)

    # -- grading -------------------------------------------------------
    def fdeg(self, e):
        return sum(a * b for a, b in zip(e, self._w))

    def bdeg(self, e):
        return sum(e[:self.alg.nbase])

    def keeps(self, e, cap=None):
        fd = self.fdeg(e)
        lim = self.N if cap is None else min(cap, self.N)
        return fd <= lim and fd + self.bdeg(e) <= self.N + self.T

    def like(self, re=None, im=None):
        out = GradedSeries.__new__(GradedSeries)
        out.alg, out.N, out.T, out._w = self.alg, self.N, self.T, self._w
        out.re = demote_dict(re) if re is not None else {}
        out.im = demote_dict(im) if im is not None else {}
        return out

    def _check(self, other):
        if not isinstance(other, GradedSeries):
            raise AlgebraError("expected a GradedSeries")
        if other.alg != self.alg:
            raise AlgebraError(f"algebra mismatch: {self.alg} vs {other.alg}")
        if (other.N, other.T) != (self.N, self.T):
            raise AlgebraError(f"truncation mismatch: {(self.N, self.T)} vs {(other.N, other.T)}")

    # -- constructors --------------------------------------------------
    @classmethod
    def zero(cls, alg, N, T=None):
        return cls(alg, N, T)

    @classmethod
    def from_poly(cls, alg, poly, N, T=None, imag=None):
        return cls(alg, N, T, poly.terms, imag.terms if imag is not None else None)

    @classmethod
    def parse(cls, alg, text, N, T=None):
        from .expr import parse_poly
        return cls.from_poly(alg, parse_poly(text, alg.names), N, T)

    def var(self, name, c=1):
        e = [0] * self.alg.nvars
        e[self.alg.index(name)] = 1
        return self.like({tuple(e): mpq(c)} if self.keeps(tuple(e)) else {})

    def const(self, c):
        e = (0,) * self.alg.nvars
        c = mpq(c) if isinstance(c, int) else c
        return self.like({e: c} if c != 0 else {})

    # -- basic ring structure -----------------------------------------
    def is_zero(self):
        return not self.re and not self.im

    def is_real(self):
        return not self.im

    def is_exact(self):
        return all(is_exact(c) for c in itertools.chain(self.re.values(), self.im.values()))

    def __eq__(self, other):
        if not isinstance(other, GradedSeries):
            return NotImplemented
        return (self - other).is_zero()

    __hash__ = None

    @staticmethod
    def _addto(dst, src, sign=1):
        for e, c in src.items():
            v = dst.get(e, 0) + (c if sign == 1 else -c)
            if v == 0:
                dst.pop(e, None)
            else:
                dst[e] = v

    def __add__(self, other):
        self._check(other)
        re, im = dict(self.re), dict(self.im)
        self._addto(re, other.re)
        self._addto(im, other.im)
        return self.like(re, im)

    def __sub__(self, other):
        self._check(other)
        re, im = dict(self.re), dict(self.im)
        self._addto(re, other.re, -1)
        self._addto(im, other.im, -1)
        return self.like(re, im)

    def __neg__(self):
        return self.like({e: -c for e, c in self.re.items()}, {e: -c for e, c in self.im.items()})

    def scale(self, c, ci=0):
        """Multiply by the scalar c + i*ci."""
        if isinstance(c, int):
            c = mpq(c)
        if isinstance(ci, int):
            ci = mpq(ci)
        re, im = {}, {}
        if c != 0:
            self._addto(re, {e: v * c for e, v in self.re.items()})
            self._addto(im, {e: v * c for e, v in self.im.items()})
        if ci != 0:
            self._addto(re, {e: -v * ci for e, v in self.im.items()})
            self._addto(im, {e: v * ci for e, v in self.re.items()})
        return self.like(re, im)

    def mul_pointwise(self, other, cap=None):
        """Commutative product (no Moyal corrections)."""
        self._check(other)
        re, im = {}, {}
        for (a, b, dst, sg) in ((self.re, other.re, re, 1), (self.im, other.im, re, -1),
                                (self.re, other.im, im, 1), (self.im, other.re, im, 1)):
            for e1, c1 in a.items():
                for e2, c2 in b.items():
                    e = tuple(x + y for x, y in zip(e1, e2))
                    if self.keeps(e, cap):
                        v = dst.get(e, 0) + (c1 * c2 if sg == 1 else -(c1 * c2))
                        dst[e] = v
        return self.like(_clean(re), _clean(im))

    def conj(self):
        return self.like(dict(self.re), {e: -c for e, c in self.im.items()})

    def real_part(self):
        return self.like(dict(self.re), {})

    def imag_part(self):
        return self.like(dict(self.im), {})

    def to_float(self):
        f = lambda d: {e: float(c) for e, c in d.items()}
        return self.like(f(self.re), f(self.im))

    def map_coeffs(self, fn):
        return self.like(_clean({e: fn(c) for e, c in self.re.items()}),
                         _clean({e: fn(c) for e, c in self.im.items()}))

    def retruncate(self, N, T=None):
        T = self.T if T is None else T
        return GradedSeries(self.alg, N, T, self.re, self.im)

    def max_abs(self):
        vals = [abs(float(c)) for c in itertools.chain(self.re.values(), self.im.values())]
        return max(vals, default=0.0)

    def chop(self, tol):
        """Drop float coefficients below tol (float mode only)."""
        keep = lambda d: {e: c for e, c in d.items() if not (isinstance(c, float) and abs(c) < tol)}
        return self.like(keep(self.re), keep(self.im))

    # -- grading operations -------------------------------------------
    def project_degree(self, N):
        f = lambda d: {e: c for e, c in d.items() if self.fdeg(e) == N}
        return self.like(f(self.re), f(self.im))

    def degrees_below(self, N):
        f = lambda d: {e: c for e, c in d.items() if self.fdeg(e) < N}
        return self.like(f(self.re), f(self.im))

    def degrees_at_least(self, N):
        f = lambda d: {e: c for e, c in d.items() if self.fdeg(e) >= N}
        return self.like(f(self.re), f(self.im))

    def valuation(self):
        degs = [self.fdeg(e) for e in itertools.chain(self.re, self.im)]
        return min(degs) if degs else math.inf

    def degree(self):
        degs = [self.fdeg(e) for e in itertools.chain(self.re, self.im)]
        return max(degs) if degs else -1

    # -- products ------------------------------------------------------
    def star(self, other, cap=None):
        self._check(other)
        return _combine(self, other, cap, bracket=False)

    def __mul__(self, other):
        if isinstance(other, GradedSeries):
            return self.star(other)
        return self.scale(other)

    __rmul__ = scale

    def bracket_over_ih(self, other, cap=None):
        """(i/p)[self, other] for the algebra parameter p (hbar in E1, h in E2)."""
        self._check(other)
        return _combine(self, other, cap, bracket=True)

    def poisson(self, other):
        """Poisson bracket induced by the star product, via direct differentiation."""
        self._check(other)
        out = self.like()
        for p, q, pp in self.alg.pairs:
            a = _diff(self, p).mul_pointwise(_diff(other, q)) - _diff(self, q).mul_pointwise(_diff(other, p))
            if pp == 2:
                a = a.mul_pointwise(self.var(self.alg.names[self.alg.param]))
            out = out + a
        return out

    # -- serialisation -------------------------------------------------
    def coeff_poly(self, fiber_key, imag=False):
        """Base polynomial multiplying the fibre monomial ``fiber_key``."""
        nb = self.alg.nbase
        src = self.im if imag else self.re
        return Poly(nb, {e[:nb]: c for e, c in src.items() if e[nb:] == tuple(fiber_key)})

    def to_text(self):
        names = self.alg.names
        lines = [f"# {self.alg.tag}(s={self.alg.s},k={self.alg.k}) N_max={self.N} T_max={self.T}"]
        for part, d in (("re", self.re), ("im", self.im)):
            for e in sorted(d, key=lambda e: (self.fdeg(e), self.bdeg(e), tuple(-x for x in e))):
                mono = "*".join(n if k == 1 else f"{n}^{k}" for n, k in zip(names, e) if k) or "1"
                lines.append(f"{part} {mono} {d[e]}")
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return f"GradedSeries({self.alg.tag}, N={self.N}, T={self.T}, terms={len(self.re) + len(self.im)})"


def _diff(a, i):
    def f(d):
        out = {}
        for e, c in d.items():
            if e[i]:
                e2 = list(e)
                e2[i] -= 1
                out[tuple(e2)] = c * e[i]
        return out
    return a.like(f(a.re), f(a.im))


# ---------------------------------------------------------------------------
# Moyal kernel.  exp((p/2i) P) with P = sum over pairs of
# d_mom (x) d_pos - d_pos (x) d_mom expands per pair as
#   sum_{a,b} c^(a+b) / (a! b!) (-1)^b (d_mom^a d_pos^b f)(d_pos^a d_mom^b g),
# c = p_pair / (2i).  The factor (1/i)^m is split off and handled through the
# parity of the total order m: even orders are real, odd orders imaginary.

@lru_cache(maxsize=None)
def _pair_options(P1, Q1, P2, Q2):
    out = []
    for a in range(min(P1, Q2) + 1):
        for b in range(min(Q1, P2) + 1):
            f = mpq(math.perm(P1, a) * math.perm(Q1, b) * math.perm(Q2, a) * math.perm(P2, b),
                    math.factorial(a) * math.factorial(b) * 2 ** (a + b))
            if b % 2:
                f = -f
            out.append((a, b, f))
    return tuple(out)


def _kernel(A, B, tmpl, flim, wlim, parity):
    """Even (parity 0) or odd (parity 1) Moyal orders of A*B for real dicts.

    Each order m carries the sign (-1)^(m//2); the returned dict holds
    sum_m sign_m K_m restricted to orders of the given parity.
    """
    out = {}
    if not A or not B:
        return out
    alg = tmpl.alg
    pairs = alg.pairs
    w = tmpl._w
    nb = alg.nbase
    par = alg.param
    N = flim
    WL = wlim
    inc = []
    for p, q, pp in pairs:
        inc.append(2 * pp - w[p] - w[q])
    binfo = []
    for e2, c2 in B.items():
        fd = sum(x * y for x, y in zip(e2, w))
        binfo.append((fd, fd + sum(e2[:nb]), e2, c2))
    binfo.sort(key=lambda t: t[0])
    for e1, c1 in A.items():
        fd1 = sum(x * y for x, y in zip(e1, w))
        wd1 = fd1 + sum(e1[:nb])
        for fd2, wd2, e2, c2 in binfo:
            if fd1 + fd2 > N:
                break
            if wd1 + wd2 > WL:
                continue
            budget = N - fd1 - fd2
            active = []
            for j, (p, q, pp) in enumerate(pairs):
                P1, Q1, P2, Q2 = e1[p], e1[q], e2[p], e2[q]
                if (P1 and Q2) or (Q1 and P2):
                    active.append((j, p, q, pp, _pair_options(P1, Q1, P2, Q2)))
            base = [x + y for x, y in zip(e1, e2)]
            c12 = c1 * c2
            if not active:
                if parity == 0:
                    e = tuple(base)
                    out[e] = out.get(e, 0) + c12
                continue
            # iterate over the product of per-pair options with pruning
            stack = [(0, 0, 0, c12, base)]
            while stack:
                idx, order, fdinc, coef, ex = stack.pop()
                if idx == len(active):
                    if order % 2 != parity:
                        continue
                    if fd1 + fd2 + fdinc > N:
                        continue
                    e = tuple(ex)
                    if fd1 + fd2 + fdinc + sum(e[:nb]) > WL:
                        continue
                    v = coef if (order // 2) % 2 == 0 else -coef
                    out[e] = out.get(e, 0) + v
                    continue
                j, p, q, pp, opts = active[idx]
                for a, b, f in opts:
                    m = a + b
                    ninc = fdinc + inc[j] * m
                    if ninc > budget:
                        continue
                    if m:
                        ex2 = list(ex)
                        ex2[p] -= m
                        ex2[q] -= m
                        ex2[par] += pp * m
                        stack.append((idx + 1, order + m, ninc, coef * f, ex2))
                    else:
                        stack.append((idx + 1, order, ninc, coef, ex))
    return _clean(out)


def _lin(*terms):
    out = {}
    for sign, d in terms:
        for e, c in d.items():
            out[e] = out.get(e, 0) + (c if sign > 0 else -c)
    return _clean(out)


def _combine(a, b, cap, bracket):
    par = a.alg.param
    fl = a.N if cap is None else min(cap, a.N)
    wl = a.N + a.T
    if not bracket:
        K = lambda x, y, parity: _kernel(x, y, a, fl, wl, parity)
        E1_ = K(a.re, b.re, 0)
        O1 = K(a.re, b.re, 1)
        if not a.im and not b.im:
            return a.like(E1_, _lin((-1, O1)))
        E2_ = K(a.im, b.im, 0)
        O2 = K(a.im, b.im, 1)
        E3 = K(a.re, b.im, 0)
        O3 = K(a.re, b.im, 1)
        E4 = K(a.im, b.re, 0)
        O4 = K(a.im, b.re, 1)
        re = _lin((1, E1_), (-1, E2_), (1, O3), (1, O4))
        im = _lin((-1, O1), (1, O2), (1, E3), (1, E4))
        return a.like(re, im)
    # (i/p)[a, b] = (2/p)(O1 - O2) + i (2/p)(O3 + O4); cap applies after dividing by p
    K = lambda x, y: _kernel(x, y, a, fl + 2, wl + 2, 1)
    O1 = K(a.re, b.re)
    O2 = K(a.im, b.im)
    O3 = K(a.re, b.im)
    O4 = K(a.im, b.re)

    def shift(d):
        out = {}
        for e, c in d.items():
            e2 = list(e)
            e2[par] -= 1
            e2 = tuple(e2)
            if a.keeps(e2, cap):
                out[e2] = 2 * c
        return out

    return a.like(shift(_lin((1, O1), (-1, O2))), shift(_lin((1, O3), (1, O4))))


def star(a, b, cap=None):
    return a.star(b, cap)


def bracket_over_ih(a, b, cap=None):
    return a.bracket_over_ih(b, cap)


def project_degree(a, N):
    return a.project_degree(N)


def valuation(a):
    return a.valuation()


def exp_ad(gen, target, order=None, cap=None, allow_base_nilpotent=False):
    """sum_{m <= order} (1/m!) ((i/p) ad_gen)^m (target), truncated.

    The generator must have fibre valuation >= 3 so that the series
    terminates.  ``allow_base_nilpotent`` admits degree-2 generators whose
    coefficients vanish at the base point; each bracket then raises the
    combined base-plus-fibre weight and the series still terminates.
    """
    gen._check(target)
    if gen.is_zero():
        return target
    if gen.valuation() < 3:
        if not allow_base_nilpotent:
            raise AlgebraError(f"generator valuation {gen.valuation()} < 3; the Lie series would not terminate")
        if any(gen.bdeg(e) == 0 for e in itertools.chain(gen.re, gen.im) if gen.fdeg(e) < 3) \
                or gen.valuation() < 2:
            raise AlgebraError("degree-2 generator part must vanish at the base point")
    if order is None:
        order = target.N + target.T + 1
    total = target
    term = target
    for m in range(1, order + 1):
        term = gen.bracket_over_ih(term, cap).scale(mpq(1, m) if term.is_exact() and gen.is_exact() else 1.0 / m)
        if term.is_zero():
            break
        total = total + term
    if cap is not None:
        total = total.like({e: c for e, c in total.re.items() if total.keeps(e, cap)},
                           {e: c for e, c in total.im.items() if total.keeps(e, cap)})
    return total


# ---------------------------------------------------------------------------
# (x, xi) <-> (z, zbar) conversion.  In the z basis the slot of the position
# variable holds the power of z_j and the slot of the momentum holds the power
# of zbar_j; coefficients are complex, kept as (re, im) pairs.

def _cmul(u, v):
    return (u[0] * v[0] - u[1] * v[1], u[0] * v[1] + u[1] * v[0])


_I_POW = [(1, 0), (0, 1), (-1, 0), (0, -1)]


@lru_cache(maxsize=None)
def _xxi_to_z(a, b):
    # x^a xi^b = 2^-(a+b) (-i)^b (z+zb)^a (z-zb)^b
    out = {}
    sc = mpq(1, 2 ** (a + b))
    ph = _I_POW[(-b) % 4]
    for k in range(a + 1):
        for l in range(b + 1):
            c = sc * math.comb(a, k) * math.comb(b, l) * (-1) ** (b - l)
            key = (k + l, a - k + b - l)
            prev = out.get(key, (0, 0))
            out[key] = (prev[0] + c * ph[0], prev[1] + c * ph[1])
    return tuple((k, v) for k, v in out.items() if v[0] != 0 or v[1] != 0)


@lru_cache(maxsize=None)
def _z_to_xxi(p, q):
    # z^p zb^q = (x + i xi)^p (x - i xi)^q
    out = {}
    for k in range(p + 1):
        for l in range(q + 1):
            c = mpq(math.comb(p, k) * math.comb(q, l))
            ph = _cmul(_I_POW[(p - k) % 4], _I_POW[(-(q - l)) % 4])
            key = (k + l, p - k + q - l)
            prev = out.get(key, (0, 0))
            out[key] = (prev[0] + c * ph[0], prev[1] + c * ph[1])
    return tuple((k, v) for k, v in out.items() if v[0] != 0 or v[1] != 0)


def _convert(a, table):
    osc = a.alg.oscillators
    out = {}
    for part, d in ((0, a.re), (1, a.im)):
        for e, c in d.items():
            terms = [(list(e), (c, 0) if part == 0 else (0, c))]
            for (ix, ip) in osc:
                if e[ix] == 0 and e[ip] == 0:
                    continue
                new = []
                for ex, cc in terms:
                    for (k1, k2), v in table(e[ix], e[ip]):
                        ex2 = list(ex)
                        ex2[ix], ex2[ip] = k1, k2
                        new.append((ex2, _cmul(cc, v)))
                terms = new
            for ex, cc in terms:
                key = tuple(ex)
                prev = out.get(key, (0, 0))
                out[key] = (prev[0] + cc[0], prev[1] + cc[1])
    re = {e: v[0] for e, v in out.items() if v[0] != 0}
    im = {e: v[1] for e, v in out.items() if v[1] != 0}
    return a.like(re, im)


def to_z_basis(a):
    return _convert(a, _xxi_to_z)


def from_z_basis(a):
    return _convert(a, _z_to_xxi)


def is_diagonal(a):
    """True when every monomial is a function of the oscillators |z_j|^2."""
    z = to_z_basis(a)
    for d in (z.re, z.im):
        for e in d:
            if any(e[ix] != e[ip] for ix, ip in a.alg.oscillators):
                return False
    return True


def oscillator(alg, j, N, T=None):
    """|z_j|^2 = x_j^2 + xi_j^2 (or t_j^2 + tt_j^2 in E2)."""
    ix, ip = alg.oscillators[j]
    e1 = [0] * alg.nvars
    e2 = [0] * alg.nvars
    e1[ix] = 2
    e2[ip] = 2
    return GradedSeries(alg, N, T, {tuple(e1): mpq(1), tuple(e2): mpq(1)})


def random_series(alg, N, T, rng=None, nterms=12, fiber_max=None, base_max=None, coeff_range=5, min_degree=0):
    """Random real exact series, for property tests."""
    rng = rng or random.Random(0)
    fiber_max = N if fiber_max is None else fiber_max
    base_max = T if base_max is None else base_max
    tmpl = GradedSeries(alg, N, T)
    nb = alg.nbase
    nv = alg.nvars
    re = {}
    tries = 0
    while len(re) < nterms and tries < 50 * nterms:
        tries += 1
        e = [0] * nv
        bd = rng.randint(0, base_max)
        for _ in range(bd):
            if nb:
                e[rng.randrange(nb)] += 1
        fd = rng.randint(min_degree, fiber_max)
        left = fd
        while left > 0:
            i = rng.randrange(nb, nv)
            wt = 2 if i == nv - 1 else 1
            if wt <= left:
                e[i] += 1
                left -= wt
        e = tuple(e)
        if not tmpl.keeps(e):
            continue
        c = mpq(rng.randint(-coeff_range, coeff_range), rng.randint(1, coeff_range))
        if c != 0:
            re[e] = c
    return GradedSeries(alg, N, T, re)
