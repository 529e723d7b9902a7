"""Precision contexts, exact rationals and the constants behind ln s integrals.

All combinatorial and integral coefficients are kept as exact rationals
(``gmpy2.mpq``).  Conversion to binary floating point happens once, through a
:class:`PrecisionContext`, with round-to-nearest-even.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Union

import gmpy2
from gmpy2 import mpfr, mpq

Rational = type(mpq())
RationalLike = Union[int, str, Fraction, "mpq"]

MIN_DIGITS = 30
GUARD_BITS = 16


def as_rational(value) -> mpq:
    """Coerce ``value`` to an exact rational.

    Accepts ints, ``Fraction``, ``mpq`` and strings such as ``"3/2"`` or
    ``"0.25"``.  Binary floats are rejected: they rarely mean what the caller
    intended when used as a physical parameter.
    """
    if isinstance(value, Rational):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return mpq(value)
    if isinstance(value, Fraction):
        return mpq(value.numerator, value.denominator)
    if isinstance(value, str):
        frac = Fraction(value.strip())
        return mpq(frac.numerator, frac.denominator)
    if type(value).__name__ == "mpz":
        return mpq(value)
    raise TypeError(f"cannot interpret {value!r} as an exact rational")


_harmonic = [mpq(0)]
_harmonic2 = [mpq(0)]


def harmonic(p: int) -> mpq:
    """H_p = 1 + 1/2 + ... + 1/p, exactly."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    while len(_harmonic) <= p:
        j = len(_harmonic)
        _harmonic.append(_harmonic[-1] + mpq(1, j))
    return _harmonic[p]


def harmonic2(p: int) -> mpq:
    """Second-order harmonic number sum_{j<=p} 1/j**2, exactly."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    while len(_harmonic2) <= p:
        j = len(_harmonic2)
        _harmonic2.append(_harmonic2[-1] + mpq(1, j * j))
    return _harmonic2[p]


def bits_for_digits(digits: int) -> int:
    return math.ceil(digits * math.log2(10)) + GUARD_BITS


@contextmanager
def working_precision(bits: int) -> Iterator[None]:
    """Run a block with the gmpy2 thread-local precision set to ``bits``."""
    with gmpy2.context(gmpy2.get_context(), precision=bits, round=gmpy2.RoundToNearest):
        yield


@dataclass(frozen=True)
class PrecisionContext:
    """Immutable working-precision settings plus cached constants.

    ``gamma``, ``pi_squared`` and ``ln_k`` are evaluated at ``bits`` binary
    precision, which covers ``decimal_digits`` decimals with guard bits.
    """

    decimal_digits: int
    k: mpq
    bits: int = field(repr=False)
    gamma: mpfr = field(repr=False)
    pi_squared: mpfr = field(repr=False)
    ln_k: mpfr = field(repr=False)

    @property
    def lam(self) -> mpfr:
        """gamma + ln k, the constant all log integrals are expanded in."""
        with working_precision(self.bits):
            return self.gamma + self.ln_k

    @property
    def zeta2(self) -> mpfr:
        with working_precision(self.bits):
            return self.pi_squared / 6

    def real(self, value) -> mpfr:
        """Correctly rounded conversion of an exact number to working precision."""
        if isinstance(value, type(mpfr())):
            with working_precision(self.bits):
                return +value
        return mpfr(as_rational(value), self.bits)

    def working(self):
        return working_precision(self.bits)

    def with_digits(self, digits: int) -> "PrecisionContext":
        return make_context(digits, self.k)


def make_context(digits: int, k: RationalLike = 2) -> PrecisionContext:
    if digits < MIN_DIGITS:
        raise ValueError(f"at least {MIN_DIGITS} decimal digits are required, got {digits}")
    k = as_rational(k)
    if k <= 0:
        raise ValueError("scale parameter k must be positive")
    bits = bits_for_digits(digits)
    with working_precision(bits):
        gamma = gmpy2.const_euler()
        pi = gmpy2.const_pi()
        pi_squared = pi * pi
        ln_k = mpfr(0) if k == 1 else gmpy2.log(mpfr(k))
    return PrecisionContext(digits, k, bits, gamma, pi_squared, ln_k)


def to_decimal_string(x: mpfr, digits: int) -> str:
    """Render ``x`` with ``digits`` significant decimals, round-half-even."""
    mant, exp, _ = x.digits(10, digits)
    if mant == "0" or set(mant.lstrip("-")) <= {"0"}:
        return "0"
    sign = "-" if mant.startswith("-") else ""
    mant = mant.lstrip("-")
    # value = 0.mant * 10**exp
    if exp <= 0:
        return f"{sign}0.{'0' * -exp}{mant}"
    if exp >= len(mant):
        return f"{sign}{mant}{'0' * (exp - len(mant))}"
    return f"{sign}{mant[:exp]}.{mant[exp:]}"


def mpfr_to_str(x: mpfr) -> str:
    """Decimal string that reads back to the identical binary value at ``x.precision``."""
    mant, exp, _ = x.digits(10, 0)
    if not any(ch in "123456789" for ch in mant):
        return "0"
    sign = "-" if mant.startswith("-") else ""
    return f"{sign}0.{mant.lstrip('-')}e{exp}"


def mpfr_from_str(text: str, bits: int) -> mpfr:
    return mpfr(text, bits)
