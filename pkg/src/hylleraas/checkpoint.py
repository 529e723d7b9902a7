"""Plain-text pencil checkpoints.

File ``omega_NNN.hyll`` holds one header line

    HYLL v1; omega; k; Z; digits; n; order_fingerprint

followed by the lower triangle, one entry per line: ``i j S H`` with decimal
strings that read back bit-exactly at the header precision.  Exact pencils
append two more fields, the rational coefficients of 1, Lambda, Lambda^2 and
pi^2/6 joined by ``|``, so they can be re-realized at any precision.  The
ordered basis is stored next to it as ``omega_NNN.basis.json``.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional, Union

import numpy as np
from gmpy2 import mpq

from .assembly import Pencil, PencilMeta
from .basis import BasisSet
from .numerics import as_rational, bits_for_digits, make_context, mpfr_from_str, mpfr_to_str
from .symcalc import ExactEntry

VERSION = "HYLL v1"
PathLike = Union[str, os.PathLike]


class CheckpointError(ValueError):
    """Unreadable, inconsistent or mismatched checkpoint; never silently recomputed."""


def pencil_path(directory: PathLike, omega: int) -> Path:
    return Path(directory) / f"omega_{omega:03d}.hyll"


def basis_path(directory: PathLike, omega: int) -> Path:
    return Path(directory) / f"omega_{omega:03d}.basis.json"


def _header(meta: PencilMeta, n: int) -> str:
    return f"{VERSION}; {meta.omega}; {meta.k}; {meta.Z}; {meta.digits}; {n}; {meta.fingerprint}"


def _exact_field(entry: ExactEntry) -> str:
    return "|".join(str(c) for c in entry.as_tuple())


class CheckpointWriter:
    """Streams lower-triangle rows of one pencil to disk.

    Rows go to a temporary file that replaces the final one on :meth:`close`,
    so a crash never leaves a truncated checkpoint under the real name.
    """

    def __init__(self, directory: PathLike, meta: PencilMeta, n: int):
        self.meta = meta
        self.n = n
        self.path = pencil_path(directory, meta.omega)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._tmp = self.path.with_suffix(".hyll.tmp")
        self._fh = open(self._tmp, "w", encoding="ascii")
        self._fh.write(_header(meta, n) + "\n")
        self._next = 0
        self._ctx = make_context(meta.digits, meta.k) if meta.mode == "exact" else None

    def write_row(self, i: int, s_row, h_row) -> None:
        if i != self._next:
            raise CheckpointError(f"rows must be written in order; expected {self._next}, got {i}")
        lines = []
        for j, (s, h) in enumerate(zip(s_row, h_row)):
            if self._ctx is not None:
                fields = [
                    mpfr_to_str(s.realize(self._ctx)), mpfr_to_str(h.realize(self._ctx)),
                    _exact_field(s), _exact_field(h),
                ]
            else:
                fields = [mpfr_to_str(s), mpfr_to_str(h)]
            lines.append(f"{i} {j} " + " ".join(fields))
        self._fh.write("\n".join(lines) + "\n")
        self._next += 1

    def close(self) -> Path:
        self._fh.close()
        if self._next != self.n:
            raise CheckpointError(f"only {self._next} of {self.n} rows were written")
        os.replace(self._tmp, self.path)
        return self.path

    def abort(self) -> None:
        self._fh.close()
        self._tmp.unlink(missing_ok=True)


def checkpoint_write(pencil: Pencil, directory: PathLike) -> Path:
    if pencil.basis is None:
        raise CheckpointError("pencil has no basis attached")
    writer = CheckpointWriter(directory, pencil.meta, pencil.n)
    try:
        for i in range(pencil.n):
            writer.write_row(i, pencil.S[i, : i + 1], pencil.H[i, : i + 1])
    except BaseException:
        writer.abort()
        raise
    basis_path(directory, pencil.meta.omega).write_text(pencil.basis.to_json() + "\n")
    return writer.close()


def _parse_header(line: str) -> tuple[int, mpq, mpq, int, int, str]:
    parts = [p.strip() for p in line.split(";")]
    if len(parts) != 7 or parts[0] != VERSION:
        raise CheckpointError(f"unsupported checkpoint header: {line.strip()!r}")
    try:
        return (int(parts[1]), as_rational(parts[2]), as_rational(parts[3]),
                int(parts[4]), int(parts[5]), parts[6])
    except (ValueError, TypeError) as err:
        raise CheckpointError(f"malformed checkpoint header: {line.strip()!r}") from err


def checkpoint_read(
    directory: PathLike,
    omega: int,
    expect: Optional[dict] = None,
) -> Pencil:
    """Load the order-``omega`` pencil.

    ``expect`` may pin header fields (``k``, ``Z``, ``digits``, ``fingerprint``);
    any disagreement raises :class:`CheckpointError`.
    """
    path = pencil_path(directory, omega)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    with open(path, encoding="ascii") as fh:
        header = _parse_header(fh.readline())
        h_omega, k, Z, digits, n, fingerprint = header
        if h_omega != omega:
            raise CheckpointError(f"{path} holds order {h_omega}, not {omega}")
        try:
            basis = BasisSet.from_json(basis_path(directory, omega).read_text())
        except (OSError, ValueError, KeyError) as err:
            raise CheckpointError(f"missing or unreadable basis document for order {omega}") from err
        if basis.fingerprint() != fingerprint or len(basis) != n:
            raise CheckpointError("checkpoint fingerprint does not match its basis; refusing to resume")
        if basis.k != k or basis.Z != Z or basis.omega != omega:
            raise CheckpointError("checkpoint header disagrees with its basis document")
        for key, value in (expect or {}).items():
            actual = {"k": k, "Z": Z, "digits": digits, "fingerprint": fingerprint}[key]
            if actual != (as_rational(value) if key in ("k", "Z") else value):
                raise CheckpointError(f"checkpoint {key} is {actual}, run expects {value}")

        bits = bits_for_digits(digits)
        S = np.empty((n, n), dtype=object)
        H = np.empty((n, n), dtype=object)
        mode = None
        seen = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.split()
            this_mode = {4: "floating", 6: "exact"}.get(len(fields))
            if this_mode is None or (mode is not None and this_mode != mode):
                raise CheckpointError(f"{path}:{lineno}: malformed entry line")
            mode = this_mode
            i, j = int(fields[0]), int(fields[1])
            if not 0 <= j <= i < n:
                raise CheckpointError(f"{path}:{lineno}: index ({i}, {j}) out of range")
            if mode == "exact":
                s = ExactEntry.from_tuple(mpq(c) for c in fields[4].split("|"))
                h = ExactEntry.from_tuple(mpq(c) for c in fields[5].split("|"))
            else:
                s, h = mpfr_from_str(fields[2], bits), mpfr_from_str(fields[3], bits)
            S[i, j] = S[j, i] = s
            H[i, j] = H[j, i] = h
            seen += 1
    if seen != n * (n + 1) // 2:
        raise CheckpointError(f"{path} is incomplete: {seen} of {n * (n + 1) // 2} entries")
    meta = PencilMeta(omega, k, Z, digits, fingerprint, mode or "floating")
    return Pencil(S, H, meta, basis)


def latest_checkpoint(directory: PathLike, omega_max: int) -> Optional[int]:
    directory = Path(directory)
    if not directory.is_dir():
        return None
    found = [w for w in range(omega_max + 1) if pencil_path(directory, w).exists()]
    return max(found) if found else None
