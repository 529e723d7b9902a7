"""Lowest eigenpair of a symmetric-definite pencil in arbitrary precision.

Matrices are numpy object arrays of ``gmpy2.mpfr``; every routine runs under
an explicit binary precision so results do not depend on the caller's gmpy2
context.  Dot products run left to right in a fixed order, so a given input
always produces bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .numerics import bits_for_digits, make_context, working_precision

if TYPE_CHECKING:
    from .assembly import Pencil


class CholeskyFailure(ArithmeticError):
    """Pivot ``index`` was not positive at working precision."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"Cholesky pivot {index} is not positive")


class ZeroPivot(ArithmeticError):
    def __init__(self, index: int, sigma):
        self.index = index
        self.sigma = sigma
        super().__init__(f"exact zero pivot {index} in LDL^T at shift {sigma}")


class NotConverged(ArithmeticError):
    pass


class DegenerateEigenvalue(ArithmeticError):
    """More than one eigenvalue sits inside the certification bracket."""


_MPFR = type(mpfr())


def _to_mpfr_matrix(A) -> np.ndarray:
    """Copy of ``A`` rounded to the current precision (no copy if it already is)."""
    A = np.asarray(A, dtype=object)
    bits = gmpy2.get_context().precision
    if all(type(x) is _MPFR and x.precision == bits for x in A.flat):
        return A
    out = np.empty(A.shape, dtype=object)
    for idx, x in np.ndenumerate(A):
        out[idx] = mpfr(x)
    return out


def _bits(bits: Optional[int], digits: Optional[int]) -> int:
    if bits is not None:
        return bits
    if digits is not None:
        return bits_for_digits(digits)
    return gmpy2.get_context().precision


def cholesky(S, bits: Optional[int] = None, digits: Optional[int] = None) -> np.ndarray:
    """Lower factor L with L L^T = S.  Raises :class:`CholeskyFailure` on a non-positive pivot."""
    with working_precision(_bits(bits, digits)):
        A = _to_mpfr_matrix(S)
        n = A.shape[0]
        L = np.full((n, n), mpfr(0), dtype=object)
        for j in range(n):
            row = L[j, :j]
            d = A[j, j] - row.dot(row) if j else A[j, j]
            if not d > 0:
                raise CholeskyFailure(j)
            ljj = gmpy2.sqrt(d)
            L[j, j] = ljj
            if j + 1 < n:
                col = A[j + 1:, j]
                if j:
                    col = col - L[j + 1:, :j].dot(row)
                L[j + 1:, j] = col / ljj
        return L


@dataclass(frozen=True)
class LDLT:
    """Unit lower L, pivots D and the count of negative pivots of H - sigma S."""

    L: np.ndarray
    D: np.ndarray
    sigma: mpfr
    negatives: int
    bits: int

    def solve(self, b) -> np.ndarray:
        with working_precision(self.bits):
            n = self.D.shape[0]
            L = self.L
            z = np.empty(n, dtype=object)
            for i in range(n):
                z[i] = b[i] - L[i, :i].dot(z[:i]) if i else +b[i]
            y = z / self.D
            x = np.empty(n, dtype=object)
            for i in range(n - 1, -1, -1):
                x[i] = y[i] - L[i + 1:, i].dot(x[i + 1:]) if i + 1 < n else y[i]
            return x


def _ldlt(A: np.ndarray, sigma: mpfr, bits: int) -> LDLT:
    n = A.shape[0]
    L = np.full((n, n), mpfr(0), dtype=object)
    D = np.empty(n, dtype=object)
    for j in range(n):
        L[j, j] = mpfr(1)
        if j:
            v = L[j, :j] * D[:j]
            dj = A[j, j] - L[j, :j].dot(v)
        else:
            dj = +A[j, j]
        if dj == 0:
            raise ZeroPivot(j, sigma)
        D[j] = dj
        if j + 1 < n:
            col = A[j + 1:, j]
            if j:
                col = col - L[j + 1:, :j].dot(v)
            L[j + 1:, j] = col / dj
    negatives = sum(1 for d in D if d < 0)
    return LDLT(L, D, sigma, negatives, bits)


def ldlt_shifted(H, S, sigma, bits: Optional[int] = None, digits: Optional[int] = None) -> LDLT:
    """LDL^T of H - sigma*S without pivoting; ``negatives`` counts eigenvalues below sigma.

    An exact zero pivot nudges sigma by a few ulps and retries once.
    """
    bits = _bits(bits, digits)
    with working_precision(bits):
        H = _to_mpfr_matrix(H)
        S = _to_mpfr_matrix(S)
        sigma = mpfr(sigma)
        try:
            return _ldlt(H - sigma * S, sigma, bits)
        except ZeroPivot:
            bump = max(abs(sigma), mpfr(1)) * gmpy2.exp2(8 - bits)
            sigma = sigma + bump
            return _ldlt(H - sigma * S, sigma, bits)


def inertia(H, S, sigma, bits: Optional[int] = None) -> int:
    """Number of eigenvalues of the pencil strictly below ``sigma``."""
    return ldlt_shifted(H, S, sigma, bits=bits).negatives


@dataclass(frozen=True)
class EigenResult:
    energy: mpfr
    coefficients: np.ndarray
    residual_norm: mpfr
    iterations: int
    certified_lowest: bool
    sigma: mpfr
    digits: int
    backward_error: Optional[mpfr] = None  # residual / ((|H| + |E||S|) |c|_2), Frobenius norms

    @property
    def tol(self):
        return default_tol(self.digits)


def default_tol(digits: int) -> mpfr:
    with working_precision(bits_for_digits(digits)):
        return mpfr(10) ** -(digits - 10)


def _matrices(pencil: "Pencil") -> tuple[np.ndarray, np.ndarray]:
    if pencil.exact:
        pencil = pencil.realize(make_context(pencil.meta.digits, pencil.meta.k))
    return pencil.H, pencil.S


def _frobenius(A: np.ndarray) -> mpfr:
    return gmpy2.sqrt(sum(x * x for x in A.flat))


def lowest_eigenpair(
    pencil: "Pencil",
    sigma0=None,
    tol=None,
    max_iter: int = 200,
    x0: Optional[Sequence] = None,
) -> EigenResult:
    """Shifted inverse iteration for the lowest eigenvalue of H c = E S c.

    ``sigma0`` should lie below the spectrum; if the LDL^T inertia shows it
    does not, the shift is moved down until it does.  ``x0`` is a warm-start
    vector, zero padded when shorter than the pencil (nested bases).
    """
    digits = pencil.meta.digits
    bits = bits_for_digits(digits)
    H, S = _matrices(pencil)
    n = H.shape[0]
    with working_precision(bits):
        tol = default_tol(digits) if tol is None else mpfr(tol)
        sigma = mpfr(-3 if sigma0 is None else sigma0)
        fact = ldlt_shifted(H, S, sigma, bits=bits)
        width = max(abs(sigma), mpfr(1))
        for _ in range(64):
            if fact.negatives == 0:
                break
            sigma = fact.sigma - width
            width *= 2
            fact = ldlt_shifted(H, S, sigma, bits=bits)
        else:
            raise NotConverged("could not place a shift below the spectrum")
        sigma = fact.sigma

        x = np.array([mpfr(1)] * n, dtype=object)
        if x0 is not None:
            x = np.array([mpfr(0)] * n, dtype=object)
            for i, v in enumerate(x0[:n]):
                x[i] = mpfr(v)
            if all(v == 0 for v in x):
                x[0] = mpfr(1)
        Sx = S.dot(x)
        norm = gmpy2.sqrt(x.dot(Sx))
        c, Sc = x / norm, Sx / norm
        rho = c.dot(H.dot(c))
        h_norm, s_norm = _frobenius(H), _frobenius(S)
        delta = None
        previous, stalled, refinements = None, 0, 0
        settled = mpfr(10) ** -8
        for iteration in range(1, max_iter + 1):
            x = fact.solve(Sc)
            Sx = S.dot(x)
            norm = gmpy2.sqrt(x.dot(Sx))
            c, Sc = x / norm, Sx / norm
            Hc = H.dot(c)
            new_rho = c.dot(Hc)
            delta = new_rho - rho
            rho = new_rho
            r = Hc - rho * Sc
            residual = gmpy2.sqrt(r.dot(r))
            # Normwise backward error.  Evaluating H c - rho S c in working precision
            # costs about eps*(|H| + |rho||S|)*|c|_2, and |c|_2 grows with the
            # condition of S, so a bound without that factor is unattainable.
            scale = (h_norm + abs(rho) * s_norm) * gmpy2.sqrt(c.dot(c))
            if abs(delta) <= tol * abs(rho) and residual <= tol * scale:
                break
            slow = previous is not None and residual > previous / 4
            previous = residual
            if not (slow and abs(delta) <= settled * abs(rho)):
                stalled = 0
                continue
            close = abs(rho - sigma) <= max(abs(rho), 1) * mpfr(10) ** -6
            if not close and refinements < 3:
                # rho is good to about half the digits; a shift just below it makes
                # each further step gain many digits instead of a constant factor
                sigma = rho - max(10 * abs(delta), abs(rho) * mpfr(10) ** -12)
                fact = ldlt_shifted(H, S, sigma, bits=bits)
                sigma = fact.sigma
                refinements += 1
                previous = None
            elif abs(delta) <= tol * abs(rho):
                stalled += 1
                if stalled >= 3:
                    raise NotConverged(
                        f"residual stagnated at {float(residual):.3e} above "
                        f"{float(tol * scale):.1e}; more working digits are needed"
                    )
        else:
            raise NotConverged(
                f"inverse iteration did not reach tol {float(tol):.1e} in {max_iter} steps "
                f"(last change {float(abs(delta)):.3e}, residual {float(residual):.3e})"
            )

        below = rho - 2 * abs(delta) - tol * abs(rho)
        eps = max(10 * tol * abs(rho), 10 * residual)
        n_below = inertia(H, S, below, bits=bits)
        n_above = inertia(H, S, rho + eps, bits=bits)
        if n_above >= 2:
            raise DegenerateEigenvalue(
                f"{n_above} eigenvalues below {float(rho + eps)}; the ground state should be simple"
            )
        certified = n_below == 0 and n_above == 1
    return EigenResult(rho, c, residual, iteration, certified, sigma, digits, residual / scale)
