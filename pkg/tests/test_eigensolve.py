import random
from fractions import Fraction

import gmpy2
import numpy as np
import pytest
from gmpy2 import mpfr, mpq

from oracles import pencil_roots, realized_rows
from hylleraas.assembly import Pencil, PencilMeta, assemble
from hylleraas.basis import enumerate_basis
from hylleraas.eigensolve import (
    CholeskyFailure,
    DegenerateEigenvalue,
    cholesky,
    default_tol,
    inertia,
    ldlt_shifted,
    lowest_eigenpair,
)
from hylleraas.numerics import bits_for_digits, make_context, working_precision


def matrix(rows, bits=200):
    return np.array([[mpfr(mpq(x), bits) for x in row] for row in rows], dtype=object)


def as_fraction(x):
    q = mpq(x)
    return Fraction(int(q.numerator), int(q.denominator))


def toy_pencil(H, S, digits=50):
    meta = PencilMeta(0, mpq(2), mpq(2), digits, "toy", "floating")
    bits = bits_for_digits(digits)
    return Pencil(S=matrix(S, bits), H=matrix(H, bits), meta=meta)


def random_definite_pencil(n, seed):
    rng = random.Random(seed)
    B = [[Fraction(rng.randint(-9, 9), rng.randint(1, 5)) for _ in range(n)] for _ in range(n)]
    S = [[sum(B[k][i] * B[k][j] for k in range(n)) + (n if i == j else 0) for j in range(n)] for i in range(n)]
    H = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            H[i][j] = H[j][i] = Fraction(rng.randint(-20, 20), rng.randint(1, 7))
    return H, S


# -- Cholesky -------------------------------------------------------------------

def test_cholesky_identity():
    L = cholesky(matrix([[1, 0, 0], [0, 1, 0], [0, 0, 1]]), bits=100)
    assert [[L[i, j] for j in range(3)] for i in range(3)] == [[1, 0, 0], [0, 1, 0], [0, 0, 1]]


def test_cholesky_small():
    L = cholesky(matrix([[4, 2], [2, 5]]), bits=100)
    assert [[L[i, j] for j in range(2)] for i in range(2)] == [[2, 0], [1, 2]]


def hilbert(n):
    return [[mpq(1, i + j + 1) for j in range(n)] for i in range(n)]


def test_hilbert_depends_on_precision():
    cholesky(matrix(hilbert(8), bits_for_digits(30)), digits=30)
    # 5 significant digits: below the working-precision floor used elsewhere,
    # passed as raw bits to exercise the breakdown path
    with pytest.raises(CholeskyFailure) as info:
        bits = 17
        cholesky(matrix(hilbert(8), bits), bits=bits)
    assert 0 < info.value.index < 8


def test_cholesky_reconstructs():
    _, S = random_definite_pencil(6, 3)
    bits = bits_for_digits(60)
    A = matrix(S, bits)
    L = cholesky(A, bits=bits)
    with working_precision(bits):
        R = L.dot(L.T)
        for i in range(6):
            for j in range(6):
                assert abs(R[i, j] - A[i, j]) <= mpq(1, 10 ** 55) * (1 + abs(A[i, j]))


# -- LDL^T and inertia ----------------------------------------------------------

def test_inertia_examples():
    H, S = matrix([[1, 0], [0, 2]]), matrix([[1, 0], [0, 1]])
    assert ldlt_shifted(H, S, mpfr("1.5"), bits=200).negatives == 1
    assert ldlt_shifted(H, S, mpfr(0), bits=200).negatives == 0
    assert inertia(H, S, mpfr(3), bits=200) == 2


def test_zero_pivot_is_nudged():
    H, S = matrix([[1, 0], [0, 2]]), matrix([[1, 0], [0, 1]])
    fact = ldlt_shifted(H, S, mpfr(1, 200), bits=200)
    assert fact.sigma != 1 and fact.negatives in (0, 1)


@pytest.mark.parametrize("seed", range(4))
def test_inertia_counts_match_root_isolation(seed):
    H, S = random_definite_pencil(5, seed)
    roots = pencil_roots(H, S, width="1e-30")
    assert len(roots) == 5
    bits = bits_for_digits(50)
    Hm, Sm = matrix(H, bits), matrix(S, bits)
    probes = [(roots[i][1] + roots[i + 1][0]) / 2 for i in range(4)]
    probes = [roots[0][0] - 1] + probes + [roots[-1][1] + 1]
    for expected, sigma in enumerate(probes):
        shift = mpfr(mpq(sigma.numerator, sigma.denominator), bits)
        assert inertia(Hm, Sm, shift, bits=bits) == expected


# -- lowest eigenpair -----------------------------------------------------------

def test_one_by_one():
    result = lowest_eigenpair(toy_pencil([[mpq(-19, 16)]], [[mpq(1, 2)]]))
    assert result.energy == mpq(-19, 8)
    assert result.certified_lowest


def test_diagonal():
    result = lowest_eigenpair(toy_pencil([[-3, 0], [0, -1]], [[1, 0], [0, 1]]), sigma0=-4)
    assert abs(result.energy + 3) < mpq(1, 10 ** 45)
    assert abs(abs(result.coefficients[0]) - 1) < mpq(1, 10 ** 40)
    assert abs(result.coefficients[1]) < mpq(1, 10 ** 20)


def test_shift_above_spectrum_is_corrected():
    result = lowest_eigenpair(toy_pencil([[-3, 0], [0, -1]], [[1, 0], [0, 1]]), sigma0=5)
    assert abs(result.energy + 3) < mpq(1, 10 ** 45) and result.certified_lowest


def test_degenerate_ground_state_is_rejected():
    with pytest.raises(DegenerateEigenvalue):
        lowest_eigenpair(toy_pencil([[-3, 0], [0, -3]], [[1, 0], [0, 1]]), sigma0=-4)


@pytest.mark.parametrize("seed", range(3))
def test_random_pencil_against_root_isolation(seed):
    H, S = random_definite_pencil(5, seed)
    lo, hi = pencil_roots(H, S)[0]
    result = lowest_eigenpair(toy_pencil(H, S), sigma0=float(lo) - 1)
    E = as_fraction(result.energy)
    assert abs(E - lo) < Fraction(1, 10 ** 38) * max(1, abs(lo))
    assert result.certified_lowest


@pytest.mark.parametrize("omega", [0, 1, 2])
def test_small_helium_pencils_against_root_isolation(omega):
    pencil = assemble(enumerate_basis(omega), make_context(50))
    lo, hi = pencil_roots(*realized_rows(pencil))[0]
    result = lowest_eigenpair(pencil)
    assert abs(as_fraction(result.energy) - lo) < Fraction(1, 10 ** 40)
    assert result.certified_lowest


def test_residual_contract_and_normalization():
    ctx = make_context(60)
    pencil = assemble(enumerate_basis(4), ctx)
    result = lowest_eigenpair(pencil)
    H, S = (pencil.realize(ctx).H, pencil.realize(ctx).S)
    with working_precision(ctx.bits):
        c = result.coefficients
        Sc, Hc = S.dot(c), H.dot(c)
        assert abs(c.dot(Sc) - 1) < mpq(1, 10 ** 50)
        r = Hc - result.energy * Sc
        residual = gmpy2.sqrt(r.dot(r))
        h_norm = gmpy2.sqrt(sum(x * x for x in H.flat))
        s_norm = gmpy2.sqrt(sum(x * x for x in S.flat))
        scale = (h_norm + abs(result.energy) * s_norm) * gmpy2.sqrt(c.dot(c))
        assert residual <= default_tol(60) * scale
        assert abs(residual - result.residual_norm) <= mpq(1, 10 ** 50) + residual / 1000


def test_inertia_bracket():
    ctx = make_context(50)
    pencil = assemble(enumerate_basis(3), ctx)
    result = lowest_eigenpair(pencil)
    real = pencil.realize(ctx)
    with working_precision(ctx.bits):
        eps = max(10 * result.tol * abs(result.energy), 10 * result.residual_norm)
        assert inertia(real.H, real.S, result.energy - eps, bits=ctx.bits) == 0
        assert inertia(real.H, real.S, result.energy + eps, bits=ctx.bits) == 1


@pytest.mark.parametrize("factor", ["0.9", "1.1"])
def test_shift_robustness(factor):
    ctx = make_context(50)
    pencil = assemble(enumerate_basis(3), ctx)
    base = lowest_eigenpair(pencil, sigma0=-3)
    moved = lowest_eigenpair(pencil, sigma0=mpfr(-3) * mpfr(factor))
    assert moved.certified_lowest
    assert abs(moved.energy - base.energy) <= 2 * base.tol * abs(base.energy)


def test_warm_start_from_smaller_order():
    ctx = make_context(50)
    small = lowest_eigenpair(assemble(enumerate_basis(2), ctx))
    pencil = assemble(enumerate_basis(3), ctx)
    cold, warm = lowest_eigenpair(pencil), lowest_eigenpair(pencil, x0=list(small.coefficients))
    assert abs(cold.energy - warm.energy) <= 2 * cold.tol
