"""Exact integrand algebra in Hylleraas coordinates.

An integrand is a finite sum of monomials ``coeff * s^a u^b t^c (ln s)^q``
times ``exp(-e*s)``.  Integration runs over 0 <= t <= u <= s < oo; the
angular factor 2*pi**2 (and the factor 2 from folding t onto [0, u]) is
dropped everywhere since it cancels in H c = E S c.

Radial integrals of ``s^a (ln s)^q e^{-ks}`` are linear combinations of
1, Lambda, Lambda**2 and pi**2/6 with rational coefficients, where
Lambda = gamma + ln k.  :class:`ExactEntry` stores those four coefficients.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterator, Mapping

import gmpy2
from gmpy2 import mpfr, mpq

from .numerics import PrecisionContext, RationalLike, as_rational, harmonic, harmonic2

Key = tuple[int, int, int, int]  # (a, b, c, q) for s^a u^b t^c (ln s)^q

MAX_LOG_POWER = 2
_ZERO = mpq(0)


class DivergentIntegral(ArithmeticError):
    """The net power of s after the inner integrations is negative."""


class ExactEntry:
    """``one + lam*Lambda + lam2*Lambda**2 + zeta2*pi**2/6`` with rational coefficients."""

    __slots__ = ("one", "lam", "lam2", "zeta2")

    def __init__(self, one=_ZERO, lam=_ZERO, lam2=_ZERO, zeta2=_ZERO):
        self.one = mpq(one)
        self.lam = mpq(lam)
        self.lam2 = mpq(lam2)
        self.zeta2 = mpq(zeta2)

    @classmethod
    def from_tuple(cls, coeffs) -> "ExactEntry":
        return cls(*coeffs)

    def as_tuple(self) -> tuple[mpq, mpq, mpq, mpq]:
        return (self.one, self.lam, self.lam2, self.zeta2)

    def __add__(self, other: "ExactEntry") -> "ExactEntry":
        return ExactEntry(
            self.one + other.one, self.lam + other.lam,
            self.lam2 + other.lam2, self.zeta2 + other.zeta2,
        )

    def __sub__(self, other: "ExactEntry") -> "ExactEntry":
        return self + (-other)

    def __neg__(self) -> "ExactEntry":
        return ExactEntry(-self.one, -self.lam, -self.lam2, -self.zeta2)

    def __mul__(self, factor) -> "ExactEntry":
        f = as_rational(factor)
        return ExactEntry(self.one * f, self.lam * f, self.lam2 * f, self.zeta2 * f)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if isinstance(other, ExactEntry):
            return self.as_tuple() == other.as_tuple()
        if self.is_rational():
            try:
                return self.one == as_rational(other)
            except TypeError:
                return NotImplemented
        return False

    def __hash__(self) -> int:
        return hash(self.as_tuple())

    def is_rational(self) -> bool:
        return self.lam == 0 and self.lam2 == 0 and self.zeta2 == 0

    def realize(self, ctx: PrecisionContext) -> mpfr:
        with ctx.working():
            value = mpfr(self.one)
            if self.lam or self.lam2:
                lam = ctx.gamma + ctx.ln_k
                value += mpfr(self.lam) * lam + mpfr(self.lam2) * (lam * lam)
            if self.zeta2:
                value += mpfr(self.zeta2) * (ctx.pi_squared / 6)
            return value

    def __repr__(self) -> str:
        return f"ExactEntry({self.one}, {self.lam}, {self.lam2}, {self.zeta2})"


class StuPolynomial:
    """Sparse exact polynomial in s, u, t, ln s (negative s powers allowed) times exp(-e*s)."""

    __slots__ = ("terms", "exp_coeff")

    def __init__(self, terms: Mapping[Key, RationalLike] | None = None, exp_coeff: RationalLike = 0):
        self.exp_coeff = as_rational(exp_coeff)
        self.terms: dict[Key, mpq] = {}
        for key, coeff in (terms or {}).items():
            coeff = as_rational(coeff)
            if coeff:
                self.terms[_check_key(key)] = self.terms.get(key, _ZERO) + coeff

    @classmethod
    def monomial(cls, coeff=1, a=0, b=0, c=0, q=0, exp_coeff=0) -> "StuPolynomial":
        return cls({(a, b, c, q): coeff}, exp_coeff)

    @classmethod
    def _raw(cls, terms: dict[Key, mpq], exp_coeff: mpq) -> "StuPolynomial":
        p = cls.__new__(cls)
        p.terms = terms
        p.exp_coeff = exp_coeff
        return p

    def __iter__(self) -> Iterator[tuple[Key, mpq]]:
        return iter(self.terms.items())

    def __len__(self) -> int:
        return len(self.terms)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StuPolynomial):
            return NotImplemented
        if not self.terms and not other.terms:
            return True
        return self.terms == other.terms and self.exp_coeff == other.exp_coeff

    def __repr__(self) -> str:
        if not self.terms:
            return "StuPolynomial(0)"
        parts = []
        for (a, b, c, q), coeff in sorted(self.terms.items()):
            factors = [str(coeff)]
            for name, power in (("s", a), ("u", b), ("t", c), ("ln(s)", q)):
                if power:
                    factors.append(name if power == 1 else f"{name}^{power}")
            parts.append("*".join(factors))
        tail = f" * exp(-{self.exp_coeff}*s)" if self.exp_coeff else ""
        return f"StuPolynomial({' + '.join(parts)}{tail})"

    def __add__(self, other: "StuPolynomial") -> "StuPolynomial":
        if not other.terms:
            return self
        if not self.terms:
            return other
        if self.exp_coeff != other.exp_coeff:
            raise ValueError("cannot add integrands with different exponential factors")
        terms = dict(self.terms)
        for key, coeff in other.terms.items():
            total = terms.get(key, _ZERO) + coeff
            if total:
                terms[key] = total
            else:
                terms.pop(key, None)
        return StuPolynomial._raw(terms, self.exp_coeff)

    def __neg__(self) -> "StuPolynomial":
        return self.scale(-1)

    def __sub__(self, other: "StuPolynomial") -> "StuPolynomial":
        return self + (-other)

    def scale(self, factor) -> "StuPolynomial":
        f = as_rational(factor)
        if not f:
            return StuPolynomial._raw({}, self.exp_coeff)
        return StuPolynomial._raw({k: v * f for k, v in self.terms.items()}, self.exp_coeff)

    def __mul__(self, other):
        if isinstance(other, StuPolynomial):
            return product(self, other)
        return self.scale(other)

    __rmul__ = __mul__

    def diff(self, var: str) -> "StuPolynomial":
        return differentiate(self, var)


def _check_key(key) -> Key:
    a, b, c, q = (int(x) for x in key)
    if b < 0 or c < 0:
        raise ValueError(f"u and t powers must be nonnegative, got {key}")
    if not 0 <= q <= MAX_LOG_POWER:
        raise ValueError(f"ln s power must lie in 0..{MAX_LOG_POWER}, got {key}")
    return (a, b, c, q)


def product(p1: StuPolynomial, p2: StuPolynomial) -> StuPolynomial:
    terms: dict[Key, mpq] = {}
    for (a1, b1, c1, q1), x in p1.terms.items():
        for (a2, b2, c2, q2), y in p2.terms.items():
            q = q1 + q2
            if q > MAX_LOG_POWER:
                raise ValueError(f"product raises ln s to power {q} > {MAX_LOG_POWER}")
            key = (a1 + a2, b1 + b2, c1 + c2, q)
            total = terms.get(key, _ZERO) + x * y
            if total:
                terms[key] = total
            else:
                terms.pop(key, None)
    return StuPolynomial._raw(terms, p1.exp_coeff + p2.exp_coeff)


def differentiate(p: StuPolynomial, var: str) -> StuPolynomial:
    """Exact partial derivative, including the exp(-e*s) factor for ``var='s'``."""
    terms: dict[Key, mpq] = {}

    def add(key, value):
        total = terms.get(key, _ZERO) + value
        if total:
            terms[key] = total
        else:
            terms.pop(key, None)

    e = p.exp_coeff
    for (a, b, c, q), coeff in p.terms.items():
        if var == "s":
            if a:
                add((a - 1, b, c, q), coeff * a)
            if q:
                add((a - 1, b, c, q - 1), coeff * q)
            if e:
                add((a, b, c, q), -coeff * e)
        elif var == "u":
            if b:
                add((a, b - 1, c, q), coeff * b)
        elif var == "t":
            if c:
                add((a, b, c - 1, q), coeff * c)
        else:
            raise ValueError(f"unknown variable {var!r}")
    return StuPolynomial._raw(terms, e)


def integrate_t_then_u(p: StuPolynomial) -> StuPolynomial:
    """Integrate t over [0, u] then u over [0, s]; the result depends on s only."""
    terms: dict[Key, mpq] = {}
    for (a, b, c, q), coeff in p.terms.items():
        key = (a + b + c + 2, 0, 0, q)
        total = terms.get(key, _ZERO) + coeff / ((c + 1) * (b + c + 2))
        if total:
            terms[key] = total
        else:
            terms.pop(key, None)
    return StuPolynomial._raw(terms, p.exp_coeff)


@lru_cache(maxsize=None)
def _radial_coeffs(a: int, q: int, k: mpq) -> tuple[mpq, mpq, mpq, mpq]:
    pref = mpq(gmpy2.fac(a)) / k ** (a + 1)
    if q == 0:
        return (pref, _ZERO, _ZERO, _ZERO)
    h = harmonic(a)
    if q == 1:
        return (pref * h, -pref, _ZERO, _ZERO)
    if q == 2:
        return (pref * (h * h - harmonic2(a)), -2 * pref * h, pref, pref)
    raise ValueError(f"ln s power must lie in 0..{MAX_LOG_POWER}, got {q}")


def radial_integral_exact(a: int, q: int, k: RationalLike) -> ExactEntry:
    """int_0^oo s^a (ln s)^q e^{-ks} ds in the basis 1, Lambda, Lambda**2, pi**2/6."""
    k = as_rational(k)
    if k <= 0:
        raise ValueError("exponential coefficient must be positive")
    if a < 0:
        raise DivergentIntegral(f"s^{a} (ln s)^{q} e^(-{k}s) is not integrable at s = 0")
    return ExactEntry(*_radial_coeffs(a, q, k))


def radial_integral(a: int, q: int, k: RationalLike, ctx: PrecisionContext) -> mpfr:
    """int_0^oo s^a (ln s)^q e^{-ks} ds at the working precision of ``ctx``."""
    k = as_rational(k)
    if k <= 0:
        raise ValueError("exponential coefficient must be positive")
    if a < 0:
        raise DivergentIntegral(f"s^{a} (ln s)^{q} e^(-{k}s) is not integrable at s = 0")
    if q not in (0, 1, 2):
        raise ValueError(f"ln s power must lie in 0..{MAX_LOG_POWER}, got {q}")
    with ctx.working():
        pref = mpfr(mpq(gmpy2.fac(a)) / k ** (a + 1))
        if q == 0:
            return pref
        ln_k = ctx.ln_k if k == ctx.k else gmpy2.log(mpfr(k))
        x = mpfr(harmonic(a)) - ctx.gamma - ln_k
        if q == 1:
            return pref * x
        return pref * (x * x + ctx.pi_squared / 6 - mpfr(harmonic2(a)))


def integrate_exact(p: StuPolynomial) -> ExactEntry:
    """Full integral as exact coefficients of 1, Lambda, Lambda**2, pi**2/6 (Lambda = gamma + ln e)."""
    if not p.terms:
        return ExactEntry()
    e = p.exp_coeff
    if e <= 0:
        raise ValueError("integrand needs a decaying exponential factor")
    one = lam = lam2 = zeta2 = _ZERO
    for (a, q), coeff in _radial_terms(p):
        if a < 0:
            raise DivergentIntegral(
                f"net power s^{a} (ln s)^{q} is not integrable at s = 0"
            )
        r0, r1, r2, r3 = _radial_coeffs(a, q, e)
        one += coeff * r0
        if q:
            lam += coeff * r1
            if q == 2:
                lam2 += coeff * r2
                zeta2 += coeff * r3
    return ExactEntry(one, lam, lam2, zeta2)


def _radial_terms(p: StuPolynomial):
    for (a, _, _, q), coeff in integrate_t_then_u(p).terms.items():
        yield (a, q), coeff


def integrate_full(p: StuPolynomial, ctx: PrecisionContext) -> mpfr:
    """Full integral evaluated in floating point, one radial integral per monomial."""
    if not p.terms:
        return mpfr(0, ctx.bits)
    if p.exp_coeff <= 0:
        raise ValueError("integrand needs a decaying exponential factor")
    with ctx.working():
        total = mpfr(0)
        for (a, q), coeff in _radial_terms(p):
            total += mpfr(coeff) * radial_integral(a, q, p.exp_coeff, ctx)
        return total
