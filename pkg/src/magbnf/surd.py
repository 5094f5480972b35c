"""Exact arithmetic in a real quadratic field Q(sqrt(n)).

Frequencies such as (1, sqrt 2) must stay exact through the normal-form
recursions, where every division is by an integer combination of the
frequencies.  A number is stored as a + b*sqrt(n) with rational a, b.
"""

import math

from gmpy2 import mpq


def _q(x):
    if isinstance(x, float):
        raise TypeError("floats cannot enter exact quadratic-field arithmetic")
    return mpq(x)


class Surd:
    __slots__ = ("a", "b", "n")

    def __init__(self, a=0, b=0, n=2):
        if n <= 1 or math.isqrt(n) ** 2 == n:
            raise ValueError("radicand must be a non-square integer > 1")
        self.a = _q(a)
        self.b = _q(b)
        self.n = n

    @classmethod
    def sqrt(cls, n):
        return cls(0, 1, n)

    def _coerce(self, other):
        if isinstance(other, Surd):
            if other.n != self.n:
                raise ValueError("mixing different quadratic fields")
            return other
        return Surd(other, 0, self.n)

    def __add__(self, other):
        o = self._coerce(other)
        return Surd(self.a + o.a, self.b + o.b, self.n)

    __radd__ = __add__

    def __neg__(self):
        return Surd(-self.a, -self.b, self.n)

    def __pos__(self):
        return self

    def __sub__(self, other):
        o = self._coerce(other)
        return Surd(self.a - o.a, self.b - o.b, self.n)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        o = self._coerce(other)
        return Surd(self.a * o.a + self.n * self.b * o.b,
                    self.a * o.b + self.b * o.a, self.n)

    __rmul__ = __mul__

    def conjugate_field(self):
        return Surd(self.a, -self.b, self.n)

    def norm(self):
        return self.a * self.a - self.n * self.b * self.b

    def inverse(self):
        nrm = self.norm()
        if nrm == 0:
            raise ZeroDivisionError("division by zero in quadratic field")
        return Surd(self.a / nrm, -self.b / nrm, self.n)

    def __truediv__(self, other):
        return self * self._coerce(other).inverse()

    def __rtruediv__(self, other):
        return self._coerce(other) * self.inverse()

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers")
        out, base = Surd(1, 0, self.n), self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def sign(self):
        # exact sign of a + b*sqrt(n)
        sa, sb = (self.a > 0) - (self.a < 0), (self.b > 0) - (self.b < 0)
        if sb == 0:
            return sa
        if sa == 0 or sa == sb:
            return sb
        d = self.a * self.a - self.n * self.b * self.b
        return sa if d > 0 else (sb if d < 0 else 0)

    def __abs__(self):
        return -self if self.sign() < 0 else self

    def __eq__(self, other):
        if isinstance(other, float):
            return float(self) == other
        try:
            o = self._coerce(other)
        except (TypeError, ValueError):
            return NotImplemented
        return self.a == o.a and self.b == o.b

    def __hash__(self):
        if self.b == 0:
            return hash(self.a)
        return hash((self.a, self.b, self.n))

    def __lt__(self, other):
        return (self - other).sign() < 0

    def __le__(self, other):
        return (self - other).sign() <= 0

    def __gt__(self, other):
        return (self - other).sign() > 0

    def __ge__(self, other):
        return (self - other).sign() >= 0

    def __bool__(self):
        return bool(self.a) or bool(self.b)

    def __float__(self):
        return float(self.a) + float(self.b) * math.sqrt(self.n)

    def __repr__(self):
        if self.b == 0:
            return str(self.a)
        return f"({self.a}{'+' if self.b >= 0 else '-'}{abs(self.b)}*sqrt({self.n}))"

    __str__ = __repr__
