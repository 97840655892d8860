"""Root-finding over realized types, plus block-collision statistics.

``find_roots`` answers, for one quantifier-free type in one finite
structure, whether some single element occurs in every tuple realizing
it. ``rootedness_check`` sweeps that question across all types realized
by tuples satisfying a guard formula. ``collision_stat`` estimates the
probability that two disjoint freshly-sampled tuples share a
fingerprint — the Monte Carlo shadow of a type carrying positive mass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .engine import AhkSampler, StatReport, _report
from .logic import (
    FiniteStructure,
    LogicError,
    QfFormula,
    TypeFingerprint,
    eval_qf,
    num_vars,
    qf_fingerprint,
)
from .seeds import SeedKey, XiFamily

__all__ = [
    "RootReport",
    "RootednessReport",
    "find_roots",
    "rootedness_check",
    "collision_stat",
]


@dataclass(frozen=True)
class RootReport:
    """Realizations of one fingerprint and the elements common to all of them."""

    fingerprint: TypeFingerprint
    tuples: tuple[tuple[int, ...], ...]
    roots: tuple[int, ...]
    rooted: bool
    flag: str | None = None

    def row(self) -> dict:
        return {
            "bits": self.fingerprint.bits,
            "arity": self.fingerprint.arity,
            "realizations": len(self.tuples),
            "roots": list(self.roots),
            "rooted": self.rooted,
            "flag": self.flag,
        }


def _common_support(tuples: list[tuple[int, ...]]) -> tuple[int, ...]:
    common = set(tuples[0])
    for tup in tuples[1:]:
        common &= set(tup)
        if not common:
            break
    return tuple(sorted(common))


def find_roots(M: FiniteStructure, fp: TypeFingerprint) -> RootReport:
    """Enumerate every non-redundant tuple realizing fp; intersect supports.

    A fingerprint nobody realizes is reported rooted (vacuously) with
    flag="unrealized" instead of raising: rootedness quantifies over
    realizing tuples, and there are none.
    """
    if fp.arity > M.domain_size:
        raise LogicError("fingerprint arity exceeds domain size")
    hits = [
        tup
        for tup in itertools.permutations(range(M.domain_size), fp.arity)
        if qf_fingerprint(M, tup, fp.sublanguage) == fp
    ]
    if not hits:
        return RootReport(fp, (), (), True, "unrealized")
    roots = _common_support(hits)
    return RootReport(fp, tuple(hits), roots, bool(roots))


@dataclass(frozen=True)
class RootednessReport:
    """Verdicts for every realized fingerprint compatible with the guard."""

    arity: int
    sublanguage: tuple[int, ...]
    reports: tuple[RootReport, ...]

    @property
    def failures(self) -> tuple[RootReport, ...]:
        return tuple(r for r in self.reports if not r.rooted)

    @property
    def passed(self) -> bool:
        return not self.failures


def rootedness_check(
    M: FiniteStructure,
    chi: QfFormula,
    sub: tuple[int, ...] | None = None,
) -> RootednessReport:
    """Check that every realized fingerprint admitted by chi is rooted.

    chi is evaluated per tuple on the structure itself, so it may read
    symbols outside the fingerprint sublanguage; a fingerprint counts
    as admitted once any of its realizing tuples satisfies chi. Roots
    are still intersected over all realizations of the fingerprint,
    matching find_roots.
    """
    if sub is None:
        sub = tuple(range(len(M.signature)))
    m = num_vars(chi)
    if m > M.domain_size:
        return RootednessReport(m, tuple(sub), ())
    realized: dict[TypeFingerprint, list[tuple[int, ...]]] = {}
    admitted: set[TypeFingerprint] = set()
    for tup in itertools.permutations(range(M.domain_size), m):
        fp = qf_fingerprint(M, tup, sub)
        realized.setdefault(fp, []).append(tup)
        if fp not in admitted and eval_qf(M, chi, tup):
            admitted.add(fp)
    reports = []
    for fp in sorted(admitted, key=lambda f: f.bits):
        hits = realized[fp]
        roots = _common_support(hits)
        reports.append(RootReport(fp, tuple(hits), roots, bool(roots)))
    return RootednessReport(m, tuple(sub), tuple(reports))


def _window(fp: TypeFingerprint, lo: int, m: int) -> TypeFingerprint:
    """Fingerprint of coordinates lo..lo+m-1 of a wider fingerprint."""
    return TypeFingerprint.build(
        m,
        fp.sublanguage,
        fp.arities,
        lambda si, t: fp.has(si, tuple(x + lo for x in t)),
        lambda i, j: fp.eq_bit(i + lo, j + lo),
    )


def collision_stat(
    sampler: AhkSampler, n: int, trials: int, seed: SeedKey
) -> StatReport:
    """Estimate P(two disjoint n-tuples from one draw share a fingerprint).

    Each trial samples the type of 2n fresh points once and compares the
    blocks {0..n-1} and {n..2n-1}. Exchangeability makes the block
    choice immaterial; fixing it keeps runs reproducible.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if trials <= 0:
        raise ValueError("trials must be positive")
    count = 0
    for t in range(trials):
        fp = sampler.type_fn(2 * n, XiFamily(seed.child("trial", t)))
        if fp.restrict(n) == _window(fp, n, n):
            count += 1
    return _report("collision", count, trials, seed)
