"""Scalars: floats, rationals, and elements a + b*sqrt(d) of a real quadratic field."""

from __future__ import annotations

import math
from fractions import Fraction
from functools import total_ordering
from numbers import Rational
from typing import Iterable, Union


@total_ordering
class QuadraticNumber:
    """Exact element ``a + b*sqrt(d)`` with rational ``a``, ``b`` and fixed rational ``d >= 0``.

    Arithmetic between two elements requires the same radicand unless one of them
    is rational (``b == 0``).  Ordering is decided exactly by rationalization.
    """

    __slots__ = ("a", "b", "d")

    def __init__(self, a, b=0, d=0):
        self.a = Fraction(a)
        self.b = Fraction(b)
        self.d = Fraction(d)
        if self.d < 0:
            raise ValueError("radicand must be nonnegative")
        if self.d == 0:
            self.b = Fraction(0)

    # coercion helpers
    def _coerce(self, other) -> QuadraticNumber | None:
        if isinstance(other, QuadraticNumber):
            if other.b == 0 or self.b == 0 or other.d == self.d:
                return other
            raise ValueError("mixing quadratic numbers with different radicands")
        if isinstance(other, (int, Rational)):
            return QuadraticNumber(other, 0, self.d)
        return None

    def _radicand(self, other: QuadraticNumber) -> Fraction:
        if self.b != 0:
            return self.d
        return other.d

    @property
    def is_rational(self) -> bool:
        return self.b == 0

    def conjugate(self) -> QuadraticNumber:
        return QuadraticNumber(self.a, -self.b, self.d)

    def norm(self) -> Fraction:
        return self.a * self.a - self.b * self.b * self.d

    def sign(self) -> int:
        sa = (self.a > 0) - (self.a < 0)
        sb = (self.b > 0) - (self.b < 0)
        if sb == 0 or sa == sb:
            return sa if sa != 0 else sb
        if sa == 0:
            return sb
        # opposite signs: compare a^2 with b^2 d
        n = self.norm()
        if n == 0:
            return 0
        return sa if n > 0 else sb

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            if isinstance(other, float):
                return float(self) + other
            return NotImplemented
        return QuadraticNumber(self.a + o.a, self.b + o.b, self._radicand(o))

    __radd__ = __add__

    def __neg__(self):
        return QuadraticNumber(-self.a, -self.b, self.d)

    def __pos__(self):
        return self

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            if isinstance(other, float):
                return float(self) - other
            return NotImplemented
        return QuadraticNumber(self.a - o.a, self.b - o.b, self._radicand(o))

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            if isinstance(other, float):
                return float(self) * other
            return NotImplemented
        d = self._radicand(o)
        return QuadraticNumber(self.a * o.a + self.b * o.b * d, self.a * o.b + self.b * o.a, d)

    __rmul__ = __mul__

    def inverse(self) -> QuadraticNumber:
        n = self.norm()
        if n == 0:
            raise ZeroDivisionError("quadratic number is not invertible")
        return QuadraticNumber(self.a / n, -self.b / n, self.d)

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            if isinstance(other, float):
                return float(self) / other
            return NotImplemented
        return self * o.inverse()

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is None:
            if isinstance(other, float):
                return other / float(self)
            return NotImplemented
        return o * self.inverse()

    def __pow__(self, n: int):
        if not isinstance(n, int):
            return float(self) ** n
        if n < 0:
            return self.inverse() ** (-n)
        result = QuadraticNumber(1, 0, self.d)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def __abs__(self):
        return -self if self.sign() < 0 else self

    def __eq__(self, other):
        if isinstance(other, float):
            return float(self) == other
        try:
            o = self._coerce(other)
        except ValueError:
            return False
        if o is None:
            return NotImplemented
        return (self - o).sign() == 0

    def __lt__(self, other):
        if isinstance(other, float):
            return float(self) < other
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return (self - o).sign() < 0

    def __hash__(self):
        if self.b == 0:
            return hash(self.a)
        return hash((self.a, self.b, self.d))

    def __float__(self):
        if self.b == 0:
            return float(self.a)
        # a + b sqrt(d) loses accuracy under cancellation; use the conjugate form then
        approx = float(self.a) + float(self.b) * math.sqrt(self.d)
        conj = float(self.a) - float(self.b) * math.sqrt(self.d)
        if abs(approx) < 1e-3 * abs(conj):
            return float(self.norm()) / conj
        return approx

    def __repr__(self):
        return f"QuadraticNumber({self.a}, {self.b}, {self.d})"

    def __str__(self):
        return format_scalar(self)


Scalar = Union[float, Fraction, QuadraticNumber]


def is_exact(x) -> bool:
    return isinstance(x, (int, Rational, QuadraticNumber))


def exact_sqrt(q: Fraction) -> Fraction | None:
    """Return sqrt(q) if it is rational, else None."""
    q = Fraction(q)
    if q < 0:
        return None
    n, d = q.numerator, q.denominator
    rn, rd = math.isqrt(n), math.isqrt(d)
    if rn * rn == n and rd * rd == d:
        return Fraction(rn, rd)
    return None


def sqrt_in_field(q, d: Fraction) -> QuadraticNumber:
    """Express sqrt(q) as b*sqrt(d) with rational b; fails unless q/d is a rational square."""
    q = Fraction(q)
    if d == 0 or q == 0:
        r = exact_sqrt(q)
        if r is None:
            raise ValueError(f"sqrt({q}) is irrational and the field has no radicand")
        return QuadraticNumber(r, 0, d)
    r = exact_sqrt(q)
    if r is not None:
        return QuadraticNumber(r, 0, d)
    b = exact_sqrt(q / d)
    if b is None:
        raise ValueError(f"sqrt({q}) does not lie in Q(sqrt({d}))")
    return QuadraticNumber(0, b, d)


def to_float(x) -> float:
    return float(x)


def total(values: Iterable):
    """Sum with exact accumulation for exact scalars and compensated summation for floats."""
    values = list(values)
    if not values:
        return Fraction(0)
    if all(is_exact(v) for v in values):
        acc = values[0]
        for v in values[1:]:
            acc = acc + v
        return acc
    return math.fsum(float(v) for v in values)


def format_scalar(x) -> str:
    """Text form: ``a/b``, ``a/b+c/d*sqrt(n/m)`` or a shortest round-trip float."""
    if isinstance(x, QuadraticNumber):
        if x.b == 0:
            return _frac(x.a)
        sign = "+" if x.b > 0 else "-"
        return f"{_frac(x.a)}{sign}{_frac(abs(x.b))}*sqrt({_frac(x.d)})"
    if isinstance(x, (int, Rational)):
        return _frac(Fraction(x))
    return repr(float(x))


def _frac(q: Fraction) -> str:
    q = Fraction(q)
    return f"{q.numerator}/{q.denominator}"


def parse_scalar(text: str):
    text = text.strip()
    if "sqrt(" in text:
        head, rad = text.split("*sqrt(")
        rad = Fraction(rad.rstrip(")"))
        # split head into a and signed b at the last +/- that is not a leading sign
        idx = max(head.rfind("+", 1), head.rfind("-", 1))
        while idx > 0 and head[idx - 1] in "eE":
            idx = max(head.rfind("+", 1, idx), head.rfind("-", 1, idx))
        a, b = head[:idx], head[idx:]
        return QuadraticNumber(Fraction(a), Fraction(b), rad)
    if "/" in text and "." not in text and "e" not in text.lower():
        return Fraction(text)
    return float(text)
