"""Command-line driver: ``hylleraas --omega-max 6 --digits 60 --output json``.

Exit status is 0 on success, 1 when a computation fails and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, TextIO, Union

from .basis import BasisTerm
from .checkpoint import CheckpointError
from .convergence import EnergyRecord, PrecisionPolicy, SweepConfig, SweepError, format_table, sweep
from .numerics import MIN_DIGITS, as_rational

OUTPUTS = ("table", "csv", "json")


@dataclass(frozen=True)
class RunConfig:
    omega_max: int
    digits: Union[int, str] = "auto"
    k: object = 2
    Z: object = 2
    mode: str = "exact"
    threads: Union[int, str] = 1
    checkpoint_dir: Optional[Path] = None
    resume: bool = False
    output: str = "table"
    exclusions: tuple = field(default_factory=tuple)
    auto_prune: bool = False

    def __post_init__(self):
        if self.omega_max < 0:
            raise ValueError("omega_max must be nonnegative")
        if self.digits != "auto" and (not isinstance(self.digits, int) or self.digits < MIN_DIGITS):
            raise ValueError(f"digits must be 'auto' or an integer >= {MIN_DIGITS}")
        if as_rational(self.k) <= 0:
            raise ValueError("k must be positive")
        if self.output not in OUTPUTS:
            raise ValueError(f"output must be one of {OUTPUTS}")
        if self.resume and self.checkpoint_dir is None:
            raise ValueError("--resume needs --checkpoint-dir")

    def policy(self) -> PrecisionPolicy:
        return PrecisionPolicy(digits=None if self.digits == "auto" else self.digits)

    def sweep_config(self) -> SweepConfig:
        threads = (os.cpu_count() or 1) if self.threads == "auto" else int(self.threads)
        return SweepConfig(
            k=self.k, Z=self.Z, mode=self.mode, threads=threads,
            exclusions=tuple(self.exclusions), auto_prune=self.auto_prune,
            checkpoint_dir=self.checkpoint_dir, resume=self.resume,
        )


def render(records: Sequence[EnergyRecord], output: str) -> str:
    if output == "json":
        return json.dumps([r.as_dict() for r in records], indent=2) + "\n"
    if output == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["omega", "N", "energy", "delta", "ratio"])
        for r in records:
            d = r.as_dict()
            writer.writerow([d["omega"], d["N"], d["energy"], d["delta"] or "", d["ratio"] or ""])
        return buf.getvalue()
    decimals = min(r.digits for r in records) - 10 if all(r.digits for r in records) else None
    return format_table(records, decimals=decimals)


def run(config: RunConfig, out: Optional[TextIO] = None, err: Optional[TextIO] = None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        records = sweep(config.omega_max, config.policy(), config.sweep_config())
    except SweepError as exc:
        print(f"error: computation failed at omega={exc.omega} during {exc.stage}: {exc.cause}", file=err)
        return 1
    except CheckpointError as exc:
        print(f"error: {exc}", file=err)
        return 1
    out.write(render(records, config.output))
    return 0


def _digits(text: str):
    if text == "auto":
        return text
    value = int(text)
    if value < MIN_DIGITS:
        raise argparse.ArgumentTypeError(f"digits must be at least {MIN_DIGITS}")
    return value


def _threads(text: str):
    if text == "auto":
        return text
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be positive")
    return value


def _rational(text: str):
    try:
        value = as_rational(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from exc
    return value


def _positive_rational(text: str):
    value = _rational(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _term(text: str) -> BasisTerm:
    try:
        term = BasisTerm(*(int(x) for x in text.split(",")))
        return term.validate()
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"expected l,m,n,q with n even and q in {{0,1}}: {text!r}") from exc


def _nonnegative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hylleraas",
        description="Variational helium ground-state energies in the Hylleraas F-basis.",
    )
    p.add_argument("--omega-max", type=_nonnegative, required=True, help="highest order l+m+n")
    p.add_argument("--digits", type=_digits, default="auto",
                   help="working decimal digits, or 'auto' for max(50, 30 + 3*omega)")
    p.add_argument("--k", type=_positive_rational, default=as_rational(2), help="scale parameter (default 2)")
    p.add_argument("--Z", type=_rational, default=as_rational(2), help="nuclear charge (default 2)")
    p.add_argument("--mode", choices=("exact", "floating"), default="exact")
    p.add_argument("--threads", type=_threads, default=1)
    p.add_argument("--checkpoint-dir", type=Path)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--output", choices=OUTPUTS, default="table")
    p.add_argument("--exclude", type=_term, action="append", default=[], metavar="l,m,n,q",
                   help="drop a basis term (repeatable)")
    p.add_argument("--auto-prune", action="store_true",
                   help="drop new terms that make the overlap matrix numerically singular")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.resume and args.checkpoint_dir is None:
        parser.error("--resume needs --checkpoint-dir")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = RunConfig(
        omega_max=args.omega_max, digits=args.digits, k=args.k, Z=args.Z, mode=args.mode,
        threads=args.threads, checkpoint_dir=args.checkpoint_dir, resume=args.resume,
        output=args.output, exclusions=tuple(args.exclude), auto_prune=args.auto_prune,
    )
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
