"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""

import io
import json
import time
from decimal import Decimal, localcontext
from fractions import Fraction

import mpmath
import pytest
from gmpy2 import mpq

from oracles import pencil_roots, radial_quadrature, realized_rows
from hylleraas import cli
from hylleraas.assembly import assemble, energy_parts, rayleigh_quotient
from hylleraas.basis import count, enumerate_basis
from hylleraas.convergence import (
    E_STAR,
    EnergyRecord,
    PrecisionPolicy,
    SweepConfig,
    agreeing_decimals,
    extrapolate,
    format_energy_cells,
    format_table,
    load_reference_data,
    parse_reference_table,
    parse_table_text,
    ratios,
    sweep,
)
from hylleraas.eigensolve import lowest_eigenpair
from hylleraas.numerics import make_context, mpfr_to_str
from hylleraas.symcalc import ExactEntry, radial_integral

PRINTED_RATIOS = ["11.1", "3.81", "8.65", "4.84", "6.81", "6.18", "5.43", "7.66", "4.44",
                  "9.00", "3.75", "9.10", "3.14"]


def as_fraction(x):
    q = mpq(x)
    return Fraction(int(q.numerator), int(q.denominator))


def common_decimals(values):
    """Decimal places on which all values agree."""
    texts = [format(v, "f") for v in values]
    n = 0
    for chars in zip(*texts):
        if len(set(chars)) > 1:
            break
        n += 1
    return max(0, n - texts[0].index(".") - 1)


@pytest.fixture(scope="module")
def sweep_to_12():
    start = time.perf_counter()
    records = sweep(12, PrecisionPolicy(digits=80))
    return records, time.perf_counter() - start


def test_criterion_1_exact_sanity(acceptance):
    with acceptance(1, "S00 = 1/2 and single-term Rayleigh quotient = -19/8 exactly"):
        pencil = assemble(enumerate_basis(0), make_context(50))
        assert pencil.S[0, 0] == ExactEntry(mpq(1, 2))
        rayleigh_quotient()
        start = time.perf_counter()
        value = rayleigh_quotient((0, 0, 0, 0), 2, 2)
        elapsed = time.perf_counter() - start
        assert value == mpq(-19, 8)
        assert elapsed < 0.01, f"took {elapsed * 1e6:.0f} us"


def test_criterion_2_hydrogenic_calibration(acceptance):
    with acceptance(2, "kinetic/attraction/repulsion = a^2, -2Za, 5a/8 exactly for a in {1/2, 1, 3/2}"):
        for a in (mpq(1, 2), mpq(1), mpq(3, 2)):
            for Z in (0, 1, 2):
                parts = energy_parts((0, 0, 0, 0), (0, 0, 0, 0), 2 * a, Z)
                norm = parts["overlap"]
                assert norm.is_rational()
                assert parts["kinetic"] == norm * (a * a)
                assert parts["attraction"] == norm * (-2 * Z * a)
                assert parts["repulsion"] == norm * (mpq(5, 8) * a)


def test_criterion_3_integral_formulas(acceptance):
    with acceptance(3, "radial integrals match quadrature to 1e-25; (ln s)^2 e^-s = gamma^2 + pi^2/6 to 1e-30"):
        start = time.perf_counter()
        worst = mpmath.mpf(0)
        for k in (mpq(1), mpq(2), mpq(5, 2)):
            ctx = make_context(40, k)
            for a in range(7):
                for q in range(3):
                    oracle = radial_quadrature(a, q, k)
                    with mpmath.workdps(60):
                        value = mpmath.mpf(mpfr_to_str(radial_integral(a, q, k, ctx)))
                        worst = max(worst, abs((value - oracle) / oracle))
        assert worst < mpmath.mpf("1e-25"), worst
        ctx = make_context(50, 1)
        with mpmath.workdps(60):
            value = mpmath.mpf(mpfr_to_str(radial_integral(0, 2, 1, ctx)))
            assert abs(value - (mpmath.euler ** 2 + mpmath.pi ** 2 / 6)) < mpmath.mpf("1e-30")
        assert time.perf_counter() - start < 60


def test_criterion_4_small_pencil_oracle(acceptance):
    with acceptance(4, "omega <= 2 lowest eigenvalues match characteristic-polynomial roots to 1e-40 at 50 digits"):
        start = time.perf_counter()
        for omega in (0, 1, 2):
            pencil = assemble(enumerate_basis(omega), make_context(50))
            lo, hi = pencil_roots(*realized_rows(pencil))[0]
            result = lowest_eigenpair(pencil)
            assert result.certified_lowest
            assert abs(as_fraction(result.energy) - lo) < Fraction(1, 10 ** 40)
            assert hi - lo < Fraction(1, 10 ** 50)
        assert time.perf_counter() - start < 60


def test_criterion_5_convergence_to_12(acceptance, sweep_to_12):
    with acceptance(5, "omega = 12 at 80 digits: descent, above E*, digits non-decreasing, >= 10 stable digits"):
        records, elapsed = sweep_to_12
        energies = [r.energy for r in records]
        assert [r.omega for r in records] == list(range(13))
        assert [r.n_basis for r in records] == [count(w) for w in range(13)]
        assert all(r.digits >= 80 for r in records)
        assert all(b < a for a, b in zip(energies, energies[1:]))
        assert all(e > E_STAR for e in energies)
        agree = [agreeing_decimals(e) for e in energies]
        assert all(b >= a for a, b in zip(agree, agree[1:])), agree
        assert agree[-1] >= 10, agree
        assert common_decimals(energies[-3:]) >= 10
        assert elapsed < 30 * 60
        print(f"      E(12) = {str(energies[-1])[:30]}..., {agree[-1]} decimals of E*, {elapsed:.0f} s")


def test_criterion_6_table_mechanics(acceptance):
    with acceptance(6, "reconstructed E(36..50) reproduce all 13 printed ratios within 0.15"):
        start = time.perf_counter()
        data = load_reference_data()
        recs = parse_reference_table(data["rows"], data["e_star"])
        computed = [r.ratio for r in recs if r.ratio is not None]
        assert [r.omega for r in recs if r.ratio is not None] == list(range(37, 50))
        assert len(computed) == len(PRINTED_RATIOS)
        for value, printed in zip(computed, PRINTED_RATIOS):
            assert abs(float(value) - float(printed)) <= 0.15, (value, printed)
        assert recs[-1].energy == Decimal("-2.903724377034119598311159245194404446696925309838")
        assert time.perf_counter() - start < 1


def test_criterion_7_extrapolation(acceptance):
    with acceptance(7, "extrapolated limit of the reconstructed series within 2e-44 of E*"):
        start = time.perf_counter()
        data = load_reference_data()
        result = extrapolate(parse_reference_table(data["rows"], data["e_star"]))
        with localcontext() as dc:
            dc.prec = 80
            gap = abs(result.value - E_STAR)
        assert gap < Decimal("2e-44"), gap
        assert result.uncertainty > 0
        assert time.perf_counter() - start < 1


def test_criterion_8_formatter(acceptance):
    with acceptance(8, 'row 39 renders "`` 65044 4349"; parse(format(.)) is the identity'):
        data = load_reference_data()
        recs = {r.omega: r for r in parse_reference_table(data["rows"], data["e_star"])}
        assert format_energy_cells([recs[38], recs[39]])[1] == "`` 65044 4349"
        for steps, places in (([3, 9], 40), ([4], 30), ([11, 3.5], 48), ([6, 5, 8], 35)):
            with localcontext() as dc:
                dc.prec = 120
                d, values = Decimal("1e-6"), []
                for i in range(10):
                    values.append((E_STAR + d).quantize(Decimal(1).scaleb(-places)))
                    d /= Decimal(str(steps[i % len(steps)]))
            series = ratios([EnergyRecord(i, count(i), v) for i, v in enumerate(values)])
            back = parse_table_text(format_table(series), anchor_e_star=E_STAR)
            assert [r.energy for r in back] == values


def test_criterion_9_determinism(acceptance, tmp_path):
    with acceptance(9, "1 vs 8 threads give byte-identical JSON; resume equals a clean run"):
        outputs = []
        for threads in (1, 8):
            buf = io.StringIO()
            assert cli.run(cli.RunConfig(omega_max=4, threads=threads, output="json"), buf, io.StringIO()) == 0
            outputs.append(buf.getvalue().encode())
        assert outputs[0] == outputs[1]
        assert len(json.loads(outputs[0])) == 5

        policy = PrecisionPolicy(digits=50)
        clean = sweep(7, policy)
        sweep(7, policy, SweepConfig(checkpoint_dir=tmp_path))
        for omega in (6, 7):
            for suffix in (".hyll", ".basis.json", ".state.json"):
                (tmp_path / f"omega_{omega:03d}{suffix}").unlink()
        resumed = sweep(7, policy, SweepConfig(checkpoint_dir=tmp_path, resume=True))
        assert json.dumps([r.as_dict() for r in resumed]) == json.dumps([r.as_dict() for r in clean])


def test_criterion_10_variational_nesting(acceptance):
    with acceptance(10, "E(w+1) < E(w) for w = 0..8, each step beyond 10^-(digits-15)"):
        records = sweep(9)
        for a, b in zip(records, records[1:]):
            margin = Decimal(10) ** -(min(a.digits, b.digits) - 15)
            assert a.energy - b.energy > margin, (a.omega, b.omega)
