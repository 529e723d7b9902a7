"""Overlap and Hamiltonian matrices of the helium S-state problem.

The kinetic energy uses the first-derivative (Dirichlet) form in s, u, t, so
every integrand stays inside the :class:`StuPolynomial` ring.  With the
volume element u(s^2 - t^2) and the angular factor dropped,

    T(f, g) = int  u(s^2-t^2) (f_s g_s + f_u g_u + f_t g_t)
                 + s(u^2-t^2) (f_s g_u + f_u g_s)
                 + t(s^2-u^2) (f_t g_u + f_u g_t)

and the potential enters through the weight -4Z s u + (s^2 - t^2).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from gmpy2 import mpfr, mpq

from .basis import BasisSet, BasisTerm
from .eigensolve import CholeskyFailure, cholesky
from .numerics import PrecisionContext, RationalLike, as_rational
from .symcalc import ExactEntry, StuPolynomial, integrate_exact, integrate_full, product

MODES = ("exact", "floating")


class NotPositiveDefinite(ArithmeticError):
    """The realized overlap matrix failed Cholesky at ``index``."""

    def __init__(self, index: int, pencil: "Pencil", term: Optional[BasisTerm] = None):
        self.index = index
        self.pencil = pencil
        self.term = term
        where = f" (term {tuple(term)})" if term is not None else ""
        super().__init__(f"overlap matrix is not positive definite at pivot {index}{where}")


def _poly(terms: dict, exp_coeff=0) -> StuPolynomial:
    return StuPolynomial(terms, exp_coeff)


VOLUME = _poly({(2, 1, 0, 0): 1, (0, 1, 2, 0): -1})  # u (s^2 - t^2)
WEIGHT_SU = _poly({(1, 2, 0, 0): 1, (1, 0, 2, 0): -1})  # s (u^2 - t^2)
WEIGHT_TU = _poly({(2, 0, 1, 0): 1, (0, 2, 1, 0): -1})  # t (s^2 - u^2)
ATTRACTION_UNIT = _poly({(1, 1, 0, 0): -4})  # -(1/r1 + 1/r2) * volume
REPULSION = _poly({(2, 0, 0, 0): 1, (0, 0, 2, 0): -1})  # (1/r12) * volume


def weight_potential(Z: RationalLike = 2) -> StuPolynomial:
    """Potential energy times the volume element: -4Z s u + s^2 - t^2."""
    Z = as_rational(Z)
    if Z < 0:
        raise ValueError("nuclear charge must be nonnegative")
    return ATTRACTION_UNIT.scale(Z) + REPULSION


@lru_cache(maxsize=None)
def basis_function(term: BasisTerm, k: mpq) -> tuple[StuPolynomial, StuPolynomial, StuPolynomial, StuPolynomial]:
    """The term's integrand factor and its s, u, t derivatives."""
    f = StuPolynomial.monomial(1, term.s_power, term.m, term.n, term.q, k / 2)
    return f, f.diff("s"), f.diff("u"), f.diff("t")


def _kinetic_poly(A: BasisTerm, B: BasisTerm, k: mpq) -> StuPolynomial:
    _, fs, fu, ft = basis_function(A, k)
    _, gs, gu, gt = basis_function(B, k)
    grad = product(fs, gs) + product(fu, gu) + product(ft, gt)
    su = product(fs, gu) + product(fu, gs)
    tu = product(ft, gu) + product(fu, gt)
    return product(VOLUME, grad) + product(WEIGHT_SU, su) + product(WEIGHT_TU, tu)


def energy_parts(A, B, k: RationalLike = 2, Z: RationalLike = 2) -> dict[str, ExactEntry]:
    """Exact overlap, kinetic, attraction and repulsion integrals for one pair."""
    A, B, k, Z = BasisTerm(*A), BasisTerm(*B), as_rational(k), as_rational(Z)
    fg = product(basis_function(A, k)[0], basis_function(B, k)[0])
    return {
        "overlap": integrate_exact(product(VOLUME, fg)),
        "kinetic": integrate_exact(_kinetic_poly(A, B, k)),
        "attraction": integrate_exact(product(ATTRACTION_UNIT, fg)) * Z,
        "repulsion": integrate_exact(product(REPULSION, fg)),
    }


def _element_polys(A: BasisTerm, B: BasisTerm, k: mpq, Z: mpq) -> tuple[StuPolynomial, StuPolynomial]:
    fg = product(basis_function(A, k)[0], basis_function(B, k)[0])
    s_poly = product(VOLUME, fg)
    h_poly = _kinetic_poly(A, B, k) + product(weight_potential(Z), fg)
    return s_poly, h_poly


def _evaluate(poly: StuPolynomial, ctx: Optional[PrecisionContext]):
    return integrate_exact(poly) if ctx is None else integrate_full(poly, ctx)


def overlap_element(A, B, basis: BasisSet, ctx: Optional[PrecisionContext] = None):
    """S(A, B); exact coefficients when ``ctx`` is None, else a float at ctx precision."""
    A, B = _members(A, B, basis)
    fg = product(basis_function(A, basis.k)[0], basis_function(B, basis.k)[0])
    return _evaluate(product(VOLUME, fg), ctx)


def hamiltonian_element(A, B, basis: BasisSet, ctx: Optional[PrecisionContext] = None):
    """H(A, B) = T(A, B) + V(A, B)."""
    A, B = _members(A, B, basis)
    return _evaluate(_element_polys(A, B, basis.k, basis.Z)[1], ctx)


def _members(A, B, basis: BasisSet) -> tuple[BasisTerm, BasisTerm]:
    A, B = BasisTerm(*A), BasisTerm(*B)
    for term in (A, B):
        if term not in basis:
            raise KeyError(f"{tuple(term)} is not in the basis")
    return A, B


@dataclass(frozen=True)
class PencilMeta:
    omega: int
    k: mpq
    Z: mpq
    digits: int
    fingerprint: str
    mode: str


@dataclass(frozen=True, eq=False)
class Pencil:
    """Symmetric pair (S, H) of the problem H c = E S c.

    Exact pencils hold :class:`ExactEntry` objects and can be realized at any
    precision; floating pencils hold ``mpfr`` values.
    """

    S: np.ndarray
    H: np.ndarray
    meta: PencilMeta
    basis: Optional[BasisSet] = None

    def __post_init__(self):
        for arr in (self.S, self.H):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.S.shape[0]

    @property
    def exact(self) -> bool:
        return self.meta.mode == "exact"

    def realize(self, ctx: PrecisionContext) -> "Pencil":
        if not self.exact:
            if ctx.decimal_digits != self.meta.digits:
                raise ValueError("a floating pencil cannot change precision; reassemble it")
            return self
        S = _object_matrix(self.n)
        H = _object_matrix(self.n)
        for i in range(self.n):
            for j in range(i + 1):
                S[i, j] = S[j, i] = self.S[i, j].realize(ctx)
                H[i, j] = H[j, i] = self.H[i, j].realize(ctx)
        meta = replace(self.meta, digits=ctx.decimal_digits, mode="floating")
        return Pencil(S, H, meta, self.basis)

    def with_digits(self, digits: int) -> "Pencil":
        return Pencil(self.S, self.H, replace(self.meta, digits=digits), self.basis)

    def select(self, indices) -> "Pencil":
        """Sub-pencil on the given basis positions (used when pruning terms)."""
        idx = list(indices)
        basis = self.basis
        if basis is not None:
            kept = tuple(basis.terms[i] for i in idx)
            keep = set(kept)
            dropped = tuple(t for t in basis.terms if t not in keep)
            basis = BasisSet(basis.omega, basis.k, basis.Z, kept, basis.exclusions + dropped)
        fingerprint = basis.fingerprint() if basis is not None else self.meta.fingerprint
        meta = replace(self.meta, fingerprint=fingerprint)
        return Pencil(self.S[np.ix_(idx, idx)].copy(), self.H[np.ix_(idx, idx)].copy(), meta, basis)

    def leading(self, n: int) -> "Pencil":
        return self.select(range(n))

    def identical(self, other: "Pencil") -> bool:
        """Bit-exact comparison of entries, precision and metadata."""
        return self.meta == other.meta and self.same_entries(other)

    def same_entries(self, other: "Pencil") -> bool:
        """Bit-exact comparison of the matrices alone."""
        if self.exact != other.exact or self.S.shape != other.S.shape:
            return False
        for a, b in ((self.S, other.S), (self.H, other.H)):
            for x, y in zip(a.flat, b.flat):
                if self.exact:
                    if x != y:
                        return False
                elif x != y or x.precision != y.precision:
                    return False
        return True


def _object_matrix(n: int) -> np.ndarray:
    return np.empty((n, n), dtype=object)


def assemble(
    basis: BasisSet,
    ctx: PrecisionContext,
    mode: str = "exact",
    threads: int = 1,
    previous: Optional[Pencil] = None,
    on_row: Optional[Callable[[int, list, list], None]] = None,
    check: bool = True,
) -> Pencil:
    """Build the pencil over ``basis``.

    When ``previous`` covers a prefix of ``basis`` (same k, Z and, for floating
    mode, the same precision) its entries are reused and only new rows are
    computed.  ``on_row(i, S_row, H_row)`` receives each new lower-triangle row
    in order.  With ``check`` the realized overlap matrix is Cholesky-factored
    and :class:`NotPositiveDefinite` carries the failing pivot.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if len(basis) == 0:
        raise ValueError("cannot assemble an empty basis")
    if ctx.k != basis.k:
        raise ValueError("precision context and basis disagree on k")
    n = len(basis)
    S = _object_matrix(n)
    H = _object_matrix(n)
    start = 0
    if previous is not None and _reusable(previous, basis, ctx, mode):
        start = previous.n
        S[:start, :start] = previous.S
        H[:start, :start] = previous.H

    k, Z = basis.k, basis.Z
    evaluator = None if mode == "exact" else ctx

    def row(i: int):
        A = basis.terms[i]
        s_row, h_row = [], []
        for j in range(i + 1):
            s_poly, h_poly = _element_polys(A, basis.terms[j], k, Z)
            s_row.append(_evaluate(s_poly, evaluator))
            h_row.append(_evaluate(h_poly, evaluator))
        return i, s_row, h_row

    rows = range(start, n)
    if threads > 1 and len(rows) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = pool.map(row, rows)
            for i, s_row, h_row in results:
                _store(S, H, i, s_row, h_row, on_row)
    else:
        for i in rows:
            _store(S, H, *row(i), on_row)

    meta = PencilMeta(basis.omega, k, Z, ctx.decimal_digits, basis.fingerprint(), mode)
    pencil = Pencil(S, H, meta, basis)
    if check:
        check_overlap(pencil, ctx)
    return pencil


def _reusable(previous: Pencil, basis: BasisSet, ctx: PrecisionContext, mode: str) -> bool:
    if previous.basis is None or not previous.basis.is_prefix_of(basis):
        return False
    if previous.meta.mode != mode or previous.meta.k != basis.k or previous.meta.Z != basis.Z:
        return False
    return mode == "exact" or previous.meta.digits == ctx.decimal_digits


def _store(S, H, i, s_row, h_row, on_row):
    for j, (s, h) in enumerate(zip(s_row, h_row)):
        S[i, j] = S[j, i] = s
        H[i, j] = H[j, i] = h
    if on_row is not None:
        on_row(i, s_row, h_row)


def check_overlap(pencil: Pencil, ctx: PrecisionContext) -> None:
    realized = pencil.realize(ctx) if pencil.exact else pencil
    try:
        cholesky(realized.S, bits=ctx.bits)
    except CholeskyFailure as err:
        term = pencil.basis.terms[err.index] if pencil.basis is not None else None
        raise NotPositiveDefinite(err.index, pencil, term) from None


def rayleigh_quotient(A=(0, 0, 0, 0), k: RationalLike = 2, Z: RationalLike = 2) -> mpq:
    """Exact H/S for a single log-free term."""
    parts = energy_parts(A, A, k, Z)
    total = parts["kinetic"] + parts["attraction"] + parts["repulsion"]
    if not (total.is_rational() and parts["overlap"].is_rational()):
        raise ValueError("rayleigh_quotient is exact only for log-free terms")
    return total.one / parts["overlap"].one
