"""Order-by-order sweeps, successive-difference ratios and extrapolation.

Energies are carried as :class:`decimal.Decimal` so that tables, CSV and
JSON round-trip exactly.  The published-style table prints energies in groups of
five decimals and leaves out leading groups that repeat the previous row.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from decimal import Decimal, localcontext
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import gmpy2

from . import checkpoint as ckpt
from .assembly import NotPositiveDefinite, Pencil, assemble, check_overlap
from .basis import BasisTerm, count, enumerate_basis
from .eigensolve import DegenerateEigenvalue, EigenResult, NotConverged, ZeroPivot, lowest_eigenpair
from .numerics import (
    MIN_DIGITS,
    as_rational,
    bits_for_digits,
    make_context,
    mpfr_from_str,
    mpfr_to_str,
    to_decimal_string,
)

log = logging.getLogger(__name__)

DITTO = "``"
E_STAR = Decimal("-2.9037243770341195983111592451944044466969253105")


@dataclass(frozen=True)
class EnergyRecord:
    omega: int
    n_basis: int
    energy: Decimal
    delta: Optional[Decimal] = None
    ratio: Optional[Decimal] = None
    digits: Optional[int] = None
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        def text(x):
            return None if x is None else str(x)

        return {"omega": self.omega, "N": self.n_basis, "energy": text(self.energy),
                "delta": text(self.delta), "ratio": text(self.ratio)}


@dataclass(frozen=True)
class Extrapolation:
    value: Decimal
    uncertainty: Decimal
    parity_limits: tuple[Decimal, Decimal]


@dataclass(frozen=True)
class StudyReport:
    records: tuple[EnergyRecord, ...]
    e_star: Extrapolation
    table_text: str


@dataclass(frozen=True)
class PrecisionPolicy:
    """Working digits per order and what to do when the arithmetic runs out.

    ``digits=None`` selects the schedule max(floor, base + slope*omega).
    """

    digits: Optional[int] = None
    base: int = 30
    slope: int = 3
    floor: int = 50
    escalation: float = 1.5
    max_escalations: int = 3

    def __post_init__(self):
        if self.digits is not None and self.digits < MIN_DIGITS:
            raise ValueError(f"digits must be at least {MIN_DIGITS}")

    def digits_for(self, omega: int) -> int:
        if self.digits is not None:
            return self.digits
        return max(self.floor, self.base + self.slope * omega)

    def escalate(self, digits: int) -> int:
        return math.ceil(digits * self.escalation)


@dataclass(frozen=True)
class SweepConfig:
    k: object = 2
    Z: object = 2
    mode: str = "exact"
    threads: int = 1
    exclusions: tuple = ()
    auto_prune: bool = False
    checkpoint_dir: Optional[Path] = None
    resume: bool = False


class SweepError(RuntimeError):
    def __init__(self, omega: int, stage: str, cause: BaseException):
        self.omega = omega
        self.stage = stage
        self.cause = cause
        super().__init__(f"order {omega}, {stage}: {cause}")


# -- differences and ratios --------------------------------------------------

def _prec_for(values: Iterable[Decimal]) -> int:
    return max((len(v.as_tuple().digits) for v in values), default=28) + 20


def _fill_differences(records: Sequence[EnergyRecord]) -> list[EnergyRecord]:
    records = list(records)
    with localcontext() as dc:
        dc.prec = _prec_for(r.energy for r in records)
        deltas = [None] + [records[i].energy - records[i - 1].energy for i in range(1, len(records))]
        out = []
        for i, rec in enumerate(records):
            ratio, flags = None, tuple(f for f in rec.flags if f != "zero-delta")
            if 0 < i < len(records) - 1:
                if deltas[i + 1] == 0:
                    flags += ("zero-delta",)
                else:
                    dc2 = dc.copy()
                    dc2.prec = 28
                    ratio = dc2.divide(deltas[i], deltas[i + 1])
            out.append(replace(rec, delta=deltas[i], ratio=ratio, flags=flags))
    return out


def ratios(records: Sequence[EnergyRecord]) -> list[EnergyRecord]:
    """Fill delta(w) = E(w) - E(w-1) and ratio(w) = delta(w) / delta(w+1)."""
    if len(records) < 3:
        raise ValueError("successive-difference ratios need at least three records")
    return _fill_differences(records)


# -- extrapolation -----------------------------------------------------------

def extrapolate(records: Sequence[EnergyRecord]) -> Extrapolation:
    """Geometric-tail limit fitted separately to even and odd orders.

    The successive ratios alternate between a small and a large value, so the
    two-step differences E(w) - E(w-2) of each parity are treated as
    geometric.  The two parity limits are averaged; the uncertainty is half
    their spread plus the size of the last step.
    """
    if len(records) < 6:
        raise ValueError("extrapolation needs at least six records")
    E = [r.energy for r in records]
    if any(b >= a for a, b in zip(E, E[1:])):
        raise ValueError("energies must decrease strictly to extrapolate")
    with localcontext() as dc:
        dc.prec = _prec_for(E)
        limits = []
        for last in (len(E) - 1, len(E) - 2):
            d_new = E[last] - E[last - 2]
            d_old = E[last - 2] - E[last - 4]
            r = d_new / d_old
            if not 0 < r < 1:
                raise ValueError(f"two-step ratio {r:.3g} does not describe a convergent tail")
            limits.append(E[last] + d_new * r / (1 - r))
        value = (limits[0] + limits[1]) / 2
        uncertainty = abs(limits[0] - limits[1]) / 2 + abs(E[-1] - E[-2])
    return Extrapolation(value, uncertainty, (limits[0], limits[1]))


# -- table formatting --------------------------------------------------------

def _split(energy: Decimal, group: int) -> list[str]:
    """[integer part (with sign), fraction groups...]."""
    text = format(energy, "f")
    sign = "-" if text.startswith("-") else ""
    whole, _, frac = text.lstrip("-").partition(".")
    return [sign + whole] + [frac[i:i + group] for i in range(0, len(frac), group)]


def _round_decimals(energy: Decimal, decimals: Optional[int]) -> Decimal:
    if decimals is None:
        return energy
    with localcontext() as dc:
        dc.prec = max(len(energy.as_tuple().digits), decimals) + 10
        return energy.quantize(Decimal(1).scaleb(-decimals))


def format_energy_cells(
    records: Sequence[EnergyRecord], group: int = 5, decimals: Optional[int] = None
) -> list[str]:
    """Energy column text for each record.

    Leading groups equal to the previous row are left out.  A ditto mark
    opens a row whose first printed group lies further right than the
    previous row's did.
    """
    cells = []
    prev_tokens: Optional[list[str]] = None
    prev_start = 0
    for rec in records:
        tokens = _split(_round_decimals(rec.energy, decimals), group)
        start = 0
        if prev_tokens is not None:
            while (
                start < len(tokens) - 1
                and start < len(prev_tokens)
                and tokens[start] == prev_tokens[start]
                and (start == 0 or len(tokens[start]) == group == len(prev_tokens[start]))
            ):
                start += 1
        if start == 0:
            cell = tokens[0] + "." + " ".join(tokens[1:]) if len(tokens) > 1 else tokens[0]
        else:
            cell = " ".join(tokens[start:])
            if start > prev_start:
                cell = f"{DITTO} {cell}"
        cells.append(cell)
        prev_tokens, prev_start = tokens, start
    return cells


def _format_ratio(ratio: Optional[Decimal]) -> str:
    if ratio is None:
        return ""
    text = f"{float(ratio):#.3g}"
    return text.rstrip(".")


def format_table(records: Sequence[EnergyRecord], group: int = 5, decimals: Optional[int] = None) -> str:
    cells = format_energy_cells(records, group, decimals)
    width = max([len(c) for c in cells] + [len("Energies")])
    lines = [f"{'omega':>5}  {'N':>6}  {'Energies':<{width}}  Ratios"]
    for rec, cell in zip(records, cells):
        lines.append(f"{rec.omega:>5}  {rec.n_basis:>6}  {cell:<{width}}  {_format_ratio(rec.ratio)}".rstrip())
    return "\n".join(lines) + "\n"


# -- parsing printed tables --------------------------------------------------

class ReconstructionError(ValueError):
    pass


class AlignmentAmbiguity(ReconstructionError):
    def __init__(self, omega: int, candidates: list[Decimal]):
        self.omega = omega
        self.candidates = candidates
        shown = ", ".join(str(c) for c in candidates)
        super().__init__(f"row omega={omega} aligns in more than one way: {shown}")


def _parse_cell(text: str) -> tuple[bool, Optional[list[str]], list[str]]:
    """(ditto, absolute tokens or None, printed fraction groups)."""
    tokens = text.replace("”", DITTO).replace('"', DITTO).split()
    ditto = bool(tokens) and tokens[0] == DITTO
    if ditto:
        tokens = tokens[1:]
    if not tokens:
        raise ReconstructionError(f"empty energy cell {text!r}")
    if "." in tokens[0]:
        whole, _, first = tokens[0].partition(".")
        groups = ([first] if first else []) + tokens[1:]
        return ditto, [whole] + groups, groups
    if not all(t.isdigit() for t in tokens):
        raise ReconstructionError(f"unreadable energy cell {text!r}")
    return ditto, None, tokens


def _join(tokens: list[str]) -> Decimal:
    return Decimal(tokens[0] + "." + "".join(tokens[1:]))


def _ratio_tol(printed: str, tol: float) -> float:
    _, _, frac = printed.partition(".")
    return max(tol, 0.5 * 10.0 ** -len(frac))


def parse_reference_table(
    rows: Sequence,
    anchor_e_star=None,
    group: int = 5,
    ratio_tol: float = 0.15,
    tail_factor: float = 10.0,
) -> list[EnergyRecord]:
    """Rebuild full energies from rows printed with elided leading groups.

    ``rows`` are ``(omega, N, energy_text, ratio_text)`` tuples or dicts with
    those keys (``n``/``n_published`` and ``energy``/``printed`` accepted).  Each
    elided row is tried at every alignment against the row above (the first
    row against ``anchor_e_star``).  An alignment survives if energies fall
    strictly, stay above the anchor, reproduce every checkable printed ratio
    and, with an anchor, leave a final gap to it no larger than
    ``tail_factor`` times the last step.  Exactly one survivor is required.
    """
    parsed = [_normalize_row(r) for r in rows]
    anchor = None if anchor_e_star is None else Decimal(str(anchor_e_star))
    anchor_tokens = None if anchor is None else _split(anchor, group)
    cells = [_parse_cell(text) for _, _, text, _ in parsed]

    def candidates(i: int, prev: Optional[list[str]]) -> list[list[str]]:
        _, absolute, printed = cells[i]
        if absolute is not None:
            return [absolute]
        ref = prev if prev is not None else anchor_tokens
        if ref is None:
            raise ReconstructionError(f"row omega={parsed[i][0]} has elided digits but nothing to align against")
        full = 0
        while full + 1 < len(ref) and len(ref[full + 1]) == group:
            full += 1
        # prefix = integer part plus the first p fraction groups of the reference
        return [ref[: p + 1] + printed for p in range(full + 1)]

    solutions: list[list[list[str]]] = []

    def ratio_ok(chosen: list[list[str]], i: int) -> bool:
        # printed ratio at row i uses E(i-1), E(i), E(i+1)
        printed = parsed[i][3]
        if printed is None or i == 0 or i + 1 >= len(chosen):
            return True
        e0, e1, e2 = (_join(chosen[j]) for j in (i - 1, i, i + 1))
        with localcontext() as dc:
            dc.prec = 80
            if e2 == e1:
                return False
            r = float((e1 - e0) / (e2 - e1))
        return abs(r - float(printed)) <= _ratio_tol(printed, ratio_tol)

    def search(chosen: list[list[str]]) -> None:
        if len(solutions) > 1:
            return
        i = len(chosen)
        if i == len(parsed):
            if anchor is not None and len(chosen) >= 2:
                gap = abs(anchor - _join(chosen[-1]))
                step = abs(_join(chosen[-1]) - _join(chosen[-2]))
                if gap > Decimal(str(tail_factor)) * step:
                    return
            solutions.append(list(chosen))
            return
        prev = chosen[-1] if chosen else None
        for cand in candidates(i, prev):
            value = _join(cand)
            if prev is not None and not value < _join(prev):
                continue
            if anchor is not None and not value > anchor:
                continue
            chosen.append(cand)
            if ratio_ok(chosen, i - 1):
                search(chosen)
            chosen.pop()

    search([])
    if not solutions:
        raise ReconstructionError("no alignment of the printed rows satisfies the constraints")
    if len(solutions) > 1:
        a, b = solutions
        at = next(i for i in range(len(a)) if a[i] != b[i])
        raise AlignmentAmbiguity(parsed[at][0], [_join(a[at]), _join(b[at])])

    records = [
        EnergyRecord(omega, n, _join(tokens))
        for (omega, n, _, _), tokens in zip(parsed, solutions[0])
    ]
    return _fill_differences(records) if len(records) > 1 else records


def _normalize_row(row) -> tuple[int, int, str, Optional[str]]:
    if isinstance(row, dict):
        omega = row["omega"]
        n = row.get("N", row.get("n", row.get("n_published")))
        text = row.get("energy", row.get("printed"))
        ratio = row.get("ratio")
    else:
        omega, n, text, ratio = (list(row) + [None])[:4]
    ratio = None if ratio in (None, "") else str(ratio)
    return int(omega), int(n), str(text), ratio


def parse_table_text(text: str, anchor_e_star=None, group: int = 5) -> list[EnergyRecord]:
    """Parse the output of :func:`format_table`."""
    lines = text.splitlines()
    ratio_col = lines[0].index("Ratios")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        head, ratio = line[:ratio_col], line[ratio_col:].strip() or None
        omega, n, cell = head.split(None, 2)
        rows.append((int(omega), int(n), cell.strip(), ratio))
    return parse_reference_table(rows, anchor_e_star, group)


# -- bundled reference data --------------------------------------------------

def load_reference_data() -> dict:
    with resources.files("hylleraas.data").joinpath("reference_table.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def reference_records() -> list[EnergyRecord]:
    """Published orders 36..50, reconstructed from the printed rows."""
    data = load_reference_data()
    return parse_reference_table(data["rows"], data["e_star"])


# -- sweeps ------------------------------------------------------------------

@dataclass
class _SweepState:
    records: list = field(default_factory=list)
    pencil: Optional[Pencil] = None
    energy: Optional[gmpy2.mpfr] = None
    last_delta: Optional[gmpy2.mpfr] = None
    vector: Optional[list] = None
    sticky_digits: int = 0
    pruned: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "records": [r.as_dict() | {"digits": r.digits} for r in self.records],
            "energy": None if self.energy is None else mpfr_to_str(self.energy),
            "energy_bits": None if self.energy is None else self.energy.precision,
            "last_delta": None if self.last_delta is None else mpfr_to_str(self.last_delta),
            "vector": None if self.vector is None else [mpfr_to_str(x) for x in self.vector],
            "vector_bits": None if self.vector is None else self.vector[0].precision,
            "sticky_digits": self.sticky_digits,
            "pruned": [list(t) for t in self.pruned],
        }, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str, pencil: Pencil) -> "_SweepState":
        data = json.loads(text)
        bits = data["energy_bits"]
        vbits = data["vector_bits"]
        records = [
            EnergyRecord(r["omega"], r["N"], Decimal(r["energy"]), digits=r["digits"])
            for r in data["records"]
        ]
        return cls(
            records=records,
            pencil=pencil,
            energy=None if data["energy"] is None else mpfr_from_str(data["energy"], bits),
            last_delta=None if data["last_delta"] is None else mpfr_from_str(data["last_delta"], bits),
            vector=None if data["vector"] is None else [mpfr_from_str(x, vbits) for x in data["vector"]],
            sticky_digits=data["sticky_digits"],
            pruned=[BasisTerm(*t) for t in data["pruned"]],
        )


def _state_path(directory, omega: int) -> Path:
    return Path(directory) / f"omega_{omega:03d}.state.json"


def sweep(
    omega_max: int,
    policy: Optional[PrecisionPolicy] = None,
    config: Optional[SweepConfig] = None,
    on_record: Optional[Callable[[EnergyRecord], None]] = None,
) -> list[EnergyRecord]:
    """Solve orders 0..omega_max, reusing each pencil as the next one's leading block."""
    if omega_max < 0:
        raise ValueError("omega_max must be nonnegative")
    policy = policy or PrecisionPolicy()
    config = config or SweepConfig()
    k, Z = as_rational(config.k), as_rational(config.Z)
    exclusions = [BasisTerm(*t) for t in config.exclusions]

    state = _SweepState()
    start = 0
    if config.resume and config.checkpoint_dir is not None:
        state, start = _resume(config, policy, omega_max, k, Z, exclusions)
        for rec in state.records:
            if on_record is not None:
                on_record(rec)

    for omega in range(start, omega_max + 1):
        _solve_order(omega, state, policy, config, k, Z, exclusions)
        if on_record is not None:
            on_record(state.records[-1])
        if config.checkpoint_dir is not None:
            ckpt.checkpoint_write(state.pencil, config.checkpoint_dir)
            _state_path(config.checkpoint_dir, omega).write_text(state.to_json())
    return _fill_differences(state.records)


def _resume(config, policy, omega_max, k, Z, exclusions):
    last = ckpt.latest_checkpoint(config.checkpoint_dir, omega_max)
    if last is None:
        return _SweepState(), 0
    state_file = _state_path(config.checkpoint_dir, last)
    if not state_file.exists():
        raise ckpt.CheckpointError(f"checkpoint for order {last} has no sweep state file")
    pencil = ckpt.checkpoint_read(config.checkpoint_dir, last, expect={"k": k, "Z": Z})
    state = _SweepState.from_json(state_file.read_text(), pencil)
    expected = enumerate_basis(last, k, Z, exclusions + state.pruned)
    if expected.fingerprint() != pencil.meta.fingerprint:
        raise ckpt.CheckpointError("checkpoint basis does not match this run's configuration; refusing to resume")
    if pencil.meta.mode != config.mode:
        raise ckpt.CheckpointError(f"checkpoint was written in {pencil.meta.mode} mode, run uses {config.mode}")
    if pencil.meta.digits != max(policy.digits_for(last), state.sticky_digits):
        raise ckpt.CheckpointError("checkpoint precision does not match this run's precision policy")
    log.info("resuming after order %d from %s", last, config.checkpoint_dir)
    return state, last + 1


def _solve_order(omega, state: _SweepState, policy, config, k, Z, exclusions) -> None:
    digits = max(policy.digits_for(omega), state.sticky_digits)
    escalations = 0
    basis = enumerate_basis(omega, k, Z, exclusions + state.pruned)
    previous = state.pencil
    n_prev = previous.n if previous is not None else 0
    pencil = None
    while True:
        ctx = make_context(digits, k)
        stage = "assembly"
        try:
            if pencil is None or (config.mode == "floating" and pencil.meta.digits != digits):
                pencil = assemble(basis, ctx, config.mode, config.threads, previous=previous, check=False)
            else:
                pencil = pencil.with_digits(digits)
            stage = "overlap"
            check_overlap(pencil, ctx)
            stage = "eigensolve"
            realized = pencil.realize(ctx)
            if state.energy is None:
                sigma0 = -3
            elif state.last_delta is None:
                sigma0 = -3 if state.energy > -3 else state.energy - 1
            else:
                with ctx.working():
                    sigma0 = state.energy - 10 * abs(state.last_delta)
            result = lowest_eigenpair(realized, sigma0=sigma0, x0=state.vector)
            if not result.certified_lowest:
                raise NotConverged("inertia certification failed")
            break
        except NotPositiveDefinite as err:
            if config.auto_prune and err.index >= n_prev:
                term = basis.terms[err.index]
                log.info("order %d: pruning dependent term %s", omega, tuple(term))
                state.pruned.append(term)
                basis = enumerate_basis(omega, k, Z, exclusions + state.pruned)
                pencil = err.pencil.select(i for i in range(err.pencil.n) if i != err.index)
                continue
            cause = err
        except (NotConverged, ZeroPivot) as err:
            cause = err
        except DegenerateEigenvalue as err:
            raise SweepError(omega, stage, err) from err
        if escalations >= policy.max_escalations:
            raise SweepError(omega, stage, cause) from cause
        escalations += 1
        digits = policy.escalate(digits)
        log.info("order %d: %s failed (%s); retrying at %d digits", omega, stage, cause, digits)

    state.sticky_digits = max(state.sticky_digits, digits if escalations else 0)
    energy = result.energy
    if state.energy is not None:
        with gmpy2.context(gmpy2.get_context(), precision=max(energy.precision, state.energy.precision)):
            delta = energy - state.energy
        if not delta < 0:
            raise SweepError(omega, "descent", ArithmeticError(
                f"energy rose from {state.energy} to {energy}; assembly or solver bug"))
        state.last_delta = delta
    state.energy = energy
    state.vector = list(result.coefficients)
    state.pencil = pencil
    text = to_decimal_string(energy, digits)
    state.records.append(EnergyRecord(omega, len(basis), Decimal(text), digits=digits))
    log.info("order %d: N=%d E=%s (%d iterations)", omega, len(basis), text[:30], result.iterations)


def study(omega_max: int, policy=None, config=None, decimals: Optional[int] = None) -> StudyReport:
    records = sweep(omega_max, policy, config)
    return StudyReport(tuple(records), extrapolate(records), format_table(records, decimals=decimals))


def agreeing_decimals(energy: Decimal, reference: Decimal = E_STAR) -> int:
    """Number of decimal places to which ``energy`` matches ``reference``."""
    with localcontext() as dc:
        dc.prec = 100
        gap = abs(energy - reference)
    if gap == 0:
        return len(reference.as_tuple().digits)
    return max(0, int(math.floor(-gap.log10())))


def expected_n(omega: int, exclusions=()) -> int:
    drop = {BasisTerm(*t) for t in exclusions if sum(t[:3]) <= omega}
    return count(omega) - len(drop)
