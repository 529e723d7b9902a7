"""The F-basis: e^{-ks/2} s^l (u/s)^m (t/s)^n, optionally times ln s."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from gmpy2 import mpq

from .numerics import RationalLike, as_rational


class BasisTerm(NamedTuple):
    l: int
    m: int
    n: int
    q: int = 0

    @property
    def degree(self) -> int:
        return self.l + self.m + self.n

    @property
    def s_power(self) -> int:
        """Net power of s once (u/s)^m (t/s)^n is expanded."""
        return self.l - self.m - self.n

    def validate(self) -> "BasisTerm":
        if min(self.l, self.m, self.n) < 0:
            raise ValueError(f"negative exponent in {tuple(self)}")
        if self.n % 2:
            raise ValueError(f"t exponent must be even in {tuple(self)}")
        if self.q not in (0, 1):
            raise ValueError(f"log flag must be 0 or 1 in {tuple(self)}")
        return self


def sort_key(term: BasisTerm) -> tuple[int, int, int, int]:
    # Total degree first, so the order-w list is a prefix of the order-(w+1) list.
    return (term.degree, -term.l, -term.m, term.q)


@dataclass(frozen=True)
class BasisSet:
    omega: int
    k: mpq
    Z: mpq
    terms: tuple[BasisTerm, ...]
    exclusions: tuple[BasisTerm, ...] = ()

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __getitem__(self, i):
        return self.terms[i]

    def __contains__(self, term) -> bool:
        return BasisTerm(*term) in self._index

    @property
    def _index(self) -> dict[BasisTerm, int]:
        idx = self.__dict__.get("_index_cache")
        if idx is None:
            idx = {t: i for i, t in enumerate(self.terms)}
            object.__setattr__(self, "_index_cache", idx)
        return idx

    def index(self, term) -> int:
        return canonical_index(term, self)

    def fingerprint(self) -> str:
        """Short digest of the ordered term list (used to validate checkpoints)."""
        text = ";".join("%d,%d,%d,%d" % t for t in self.terms)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def is_prefix_of(self, other: "BasisSet") -> bool:
        return len(self.terms) <= len(other.terms) and other.terms[: len(self.terms)] == self.terms

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "k": str(self.k),
            "Z": str(self.Z),
            "exclusions": [list(t) for t in self.exclusions],
            "terms": [list(t) for t in self.terms],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "BasisSet":
        basis = cls(
            omega=int(data["omega"]),
            k=as_rational(data["k"]),
            Z=as_rational(data["Z"]),
            terms=tuple(BasisTerm(*t).validate() for t in data["terms"]),
            exclusions=tuple(BasisTerm(*t).validate() for t in data.get("exclusions", [])),
        )
        if len(set(basis.terms)) != len(basis.terms):
            raise ValueError("duplicate terms in basis document")
        if set(basis.terms) & set(basis.exclusions):
            raise ValueError("basis document lists an excluded term")
        return basis

    @classmethod
    def from_json(cls, text: str) -> "BasisSet":
        return cls.from_dict(json.loads(text))


def _all_terms(omega: int) -> list[BasisTerm]:
    terms = []
    for n in range(0, omega + 1, 2):
        for l in range(omega - n + 1):
            for m in range(omega - n - l + 1):
                for q in (0, 1):
                    terms.append(BasisTerm(l, m, n, q))
    terms.sort(key=sort_key)
    return terms


def enumerate_basis(
    omega: int,
    k: RationalLike = 2,
    Z: RationalLike = 2,
    exclusions: Iterable[Sequence[int]] = (),
) -> BasisSet:
    """All F-basis terms with l + m + n <= omega, minus ``exclusions``."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    excluded = tuple(dict.fromkeys(BasisTerm(*t).validate() for t in exclusions))
    drop = set(excluded)
    terms = tuple(t for t in _all_terms(omega) if t not in drop)
    return BasisSet(omega, as_rational(k), as_rational(Z), terms, excluded)


def count(omega: int) -> int:
    """Size of the unpruned basis of order ``omega``."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    return sum((omega - n + 1) * (omega - n + 2) for n in range(0, omega + 1, 2))


def canonical_index(term, basis: BasisSet) -> int:
    try:
        return basis._index[BasisTerm(*term)]
    except KeyError:
        raise KeyError(f"{tuple(term)} is not in the order-{basis.omega} basis") from None
