"""Finite relational structures, quantifier-free formulas, and type fingerprints.

Structures are closed-world: the fact set lists every true atomic
sentence, everything else is false. Fingerprints encode the full
quantifier-free type of a tuple as a bit vector in a documented
canonical order, so equality of fingerprints is equality of types.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Callable, Iterable, Iterator, Optional

import numpy as np


class LogicError(ValueError):
    pass


class DomainBoundExceeded(LogicError):
    """Raised when an exhaustive search is asked to exceed its size bound."""


# ---------------------------------------------------------------------------
# signatures and structures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Signature:
    """Ordered relational vocabulary.

    `symbols` is the materialized finite part: (name, arity) pairs.
    `generator`, when present, produces the symbol at index k for an
    unbounded vocabulary; `materialize` extends the concrete prefix.
    Arity 0 is allowed (a 0-ary relation is a single stored boolean).
    """

    symbols: tuple[tuple[str, int], ...]
    generator: Optional[Callable[[int], tuple[str, int]]] = field(
        default=None, compare=False, hash=False
    )

    def __post_init__(self) -> None:
        names = [name for name, _ in self.symbols]
        if len(set(names)) != len(names):
            raise LogicError("duplicate symbol names in signature")
        for name, arity in self.symbols:
            if arity < 0:
                raise LogicError(f"negative arity for {name!r}")

    def __len__(self) -> int:
        return len(self.symbols)

    def name(self, index: int) -> str:
        return self.symbols[index][0]

    def arity(self, index: int) -> int:
        return self.symbols[index][1]

    def arities(self) -> tuple[int, ...]:
        return tuple(arity for _, arity in self.symbols)

    def index_of(self, name: str) -> int:
        for i, (n, _) in enumerate(self.symbols):
            if n == name:
                return i
        raise LogicError(f"unknown symbol {name!r}")

    def materialize(self, count: int) -> "Signature":
        """Concrete signature holding at least `count` symbols."""
        if count <= len(self.symbols):
            return self
        if self.generator is None:
            raise LogicError("finite signature cannot be extended")
        extra = tuple(self.generator(k) for k in range(len(self.symbols), count))
        return Signature(self.symbols + extra, generator=self.generator)


def generated_signature(rule: Callable[[int], tuple[str, int]], prefix: int = 0) -> Signature:
    sig = Signature((), generator=rule)
    return sig.materialize(prefix) if prefix else sig


Fact = tuple[int, tuple[int, ...]]


@dataclass(frozen=True)
class FiniteStructure:
    """Finite structure with domain {0, .., domain_size-1} and closed-world facts."""

    signature: Signature
    domain_size: int
    facts: frozenset[Fact]

    def __post_init__(self) -> None:
        if self.domain_size < 0:
            raise LogicError("domain_size must be nonnegative")
        object.__setattr__(self, "facts", frozenset(self.facts))
        for sym, args in self.facts:
            if not 0 <= sym < len(self.signature):
                raise LogicError(f"fact references unknown symbol index {sym}")
            if len(args) != self.signature.arity(sym):
                raise LogicError(
                    f"arity mismatch for {self.signature.name(sym)}: {args}"
                )
            if any(not 0 <= a < self.domain_size for a in args):
                raise LogicError(f"fact argument out of domain: {args}")

    def holds(self, sym: int, args: tuple[int, ...]) -> bool:
        return (sym, tuple(args)) in self.facts

    def facts_sorted(self) -> list[Fact]:
        return sorted(self.facts)


@dataclass(frozen=True)
class Permutation:
    """Bijection on {0, .., n-1}, stored as the image tuple."""

    mapping: tuple[int, ...]

    def __post_init__(self) -> None:
        n = len(self.mapping)
        if sorted(self.mapping) != list(range(n)):
            raise LogicError("mapping is not a bijection on 0..n-1")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    def __call__(self, i: int) -> int:
        return self.mapping[i]

    def __len__(self) -> int:
        return len(self.mapping)

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.mapping)
        for i, img in enumerate(self.mapping):
            inv[img] = i
        return Permutation(tuple(inv))

    def compose(self, other: "Permutation") -> "Permutation":
        """self after other: (self.compose(other))(i) = self(other(i))."""
        if len(other) != len(self.mapping):
            raise LogicError("size mismatch in composition")
        return Permutation(tuple(self.mapping[other.mapping[i]] for i in range(len(other))))


def apply_permutation(structure: FiniteStructure, sigma: Permutation) -> FiniteStructure:
    """Relabel the structure along sigma.

    The image satisfies R(a1..ak) iff the original satisfies
    R(sigma^-1(a1)..sigma^-1(ak)); pushing every fact tuple forward
    through sigma implements exactly that.
    """
    if len(sigma) != structure.domain_size:
        raise LogicError("permutation size differs from domain size")
    facts = frozenset(
        (sym, tuple(sigma.mapping[a] for a in args)) for sym, args in structure.facts
    )
    return FiniteStructure(structure.signature, structure.domain_size, facts)


# ---------------------------------------------------------------------------
# quantifier-free formulas
# ---------------------------------------------------------------------------


class QfFormula:
    """Base class for quantifier-free formulas over integer variables."""

    __slots__ = ()


@dataclass(frozen=True)
class Rel(QfFormula):
    sym: int
    args: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", tuple(self.args))
        if any(v < 0 for v in self.args):
            raise LogicError("variable indices must be nonnegative")


@dataclass(frozen=True)
class Eq(QfFormula):
    left: int
    right: int


@dataclass(frozen=True)
class Not(QfFormula):
    sub: QfFormula


@dataclass(frozen=True)
class And(QfFormula):
    subs: tuple[QfFormula, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "subs", tuple(self.subs))
        if not self.subs:
            raise LogicError("And needs at least one conjunct")


@dataclass(frozen=True)
class Or(QfFormula):
    subs: tuple[QfFormula, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "subs", tuple(self.subs))
        if not self.subs:
            raise LogicError("Or needs at least one disjunct")


def conj(*subs: QfFormula) -> QfFormula:
    return subs[0] if len(subs) == 1 else And(tuple(subs))


def disj(*subs: QfFormula) -> QfFormula:
    return subs[0] if len(subs) == 1 else Or(tuple(subs))


def implies(a: QfFormula, b: QfFormula) -> QfFormula:
    return Or((Not(a), b))


def iff(a: QfFormula, b: QfFormula) -> QfFormula:
    return Or((And((a, b)), And((Not(a), Not(b)))))


def formula_vars(phi: QfFormula) -> set[int]:
    if isinstance(phi, Rel):
        return set(phi.args)
    if isinstance(phi, Eq):
        return {phi.left, phi.right}
    if isinstance(phi, Not):
        return formula_vars(phi.sub)
    if isinstance(phi, (And, Or)):
        out: set[int] = set()
        for s in phi.subs:
            out |= formula_vars(s)
        return out
    raise LogicError(f"not a quantifier-free formula: {phi!r}")


def num_vars(phi: QfFormula) -> int:
    vs = formula_vars(phi)
    return 1 + max(vs) if vs else 0


def eval_qf(structure: FiniteStructure, phi: QfFormula, assignment: tuple[int, ...]) -> bool:
    """Tarskian evaluation; assignment maps variable i to assignment[i]."""
    if isinstance(phi, Rel):
        if phi.sym >= len(structure.signature):
            raise LogicError(f"unknown symbol index {phi.sym}")
        if len(phi.args) != structure.signature.arity(phi.sym):
            raise LogicError(
                f"arity mismatch for {structure.signature.name(phi.sym)}"
            )
        try:
            args = tuple(assignment[v] for v in phi.args)
        except IndexError:
            raise LogicError("free variable unbound by assignment") from None
        return structure.holds(phi.sym, args)
    if isinstance(phi, Eq):
        try:
            return assignment[phi.left] == assignment[phi.right]
        except IndexError:
            raise LogicError("free variable unbound by assignment") from None
    if isinstance(phi, Not):
        return not eval_qf(structure, phi.sub, assignment)
    if isinstance(phi, And):
        return all(eval_qf(structure, s, assignment) for s in phi.subs)
    if isinstance(phi, Or):
        return any(eval_qf(structure, s, assignment) for s in phi.subs)
    raise LogicError(f"not a quantifier-free formula: {phi!r}")


def eval_qf_grid(structure: FiniteStructure, phi: QfFormula, nvars: int) -> np.ndarray:
    """Truth table of phi over all assignments, as a boolean nvars-dim array.

    Axis i ranges over the domain for variable i. Used by the audit
    paths that would otherwise loop over |M|^nvars assignments.
    """
    n = structure.domain_size
    shape = (n,) * nvars

    def rec(f: QfFormula) -> np.ndarray:
        if isinstance(f, Rel):
            arity = structure.signature.arity(f.sym)
            table = np.zeros((n,) * arity, dtype=bool)
            for sym, args in structure.facts:
                if sym == f.sym:
                    table[args] = True
            if arity == 0:
                base = np.full((), bool(table))
            else:
                idx = tuple(
                    np.arange(n).reshape((1,) * v + (n,) + (1,) * (nvars - v - 1))
                    for v in f.args
                )
                return np.broadcast_to(table[idx], shape)
            return np.broadcast_to(base, shape)
        if isinstance(f, Eq):
            a = np.arange(n).reshape((1,) * f.left + (n,) + (1,) * (nvars - f.left - 1))
            b = np.arange(n).reshape((1,) * f.right + (n,) + (1,) * (nvars - f.right - 1))
            return np.broadcast_to(a == b, shape)
        if isinstance(f, Not):
            return ~rec(f.sub)
        if isinstance(f, And):
            out = rec(f.subs[0]).copy()
            for s in f.subs[1:]:
                out &= rec(s)
            return out
        if isinstance(f, Or):
            out = rec(f.subs[0]).copy()
            for s in f.subs[1:]:
                out |= rec(s)
            return out
        raise LogicError(f"not a quantifier-free formula: {f!r}")

    if nvars == 0:
        return rec(phi)
    if num_vars(phi) > nvars:
        raise LogicError("formula uses more variables than the grid provides")
    return rec(phi)


# ---------------------------------------------------------------------------
# type fingerprints
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _layout(arity: int, sub_arities: tuple[int, ...]):
    """Canonical atom enumeration for a fingerprint.

    Bit order: symbols in sublanguage order, then argument tuples in
    lexicographic order over variable indices, then equality bits for
    i < j in lexicographic order.
    """
    atoms: list[tuple[int, tuple[int, ...]]] = []
    for si, ar in enumerate(sub_arities):
        atoms.extend((si, t) for t in product(range(arity), repeat=ar))
    eq_pairs = [(i, j) for i in range(arity) for j in range(i + 1, arity)]
    atom_index = {a: k for k, a in enumerate(atoms)}
    eq_index = {p: len(atoms) + k for k, p in enumerate(eq_pairs)}
    return atoms, eq_pairs, atom_index, eq_index


@dataclass(frozen=True)
class TypeFingerprint:
    """Quantifier-free type of a tuple over a sublanguage, as packed bits.

    `sublanguage` lists symbol indices of the ambient signature;
    `arities` carries their arities so the fingerprint stays
    self-interpreting. Bit k of `bits` is atom k of the canonical
    enumeration (see _layout).
    """

    arity: int
    sublanguage: tuple[int, ...]
    arities: tuple[int, ...]
    bits: int

    def _maps(self):
        return _layout(self.arity, self.arities)

    @property
    def bit_length(self) -> int:
        atoms, eq_pairs, _, _ = self._maps()
        return len(atoms) + len(eq_pairs)

    def has(self, sub_pos: int, args: tuple[int, ...]) -> bool:
        """Atom value for the sublanguage symbol at position sub_pos."""
        _, _, atom_index, _ = self._maps()
        return bool((self.bits >> atom_index[(sub_pos, tuple(args))]) & 1)

    def eq_bit(self, i: int, j: int) -> bool:
        if i == j:
            return True
        if i > j:
            i, j = j, i
        _, _, _, eq_index = self._maps()
        return bool((self.bits >> eq_index[(i, j)]) & 1)

    @classmethod
    def build(
        cls,
        arity: int,
        sublanguage: tuple[int, ...],
        arities: tuple[int, ...],
        atom_fn: Callable[[int, tuple[int, ...]], bool],
        eq_fn: Callable[[int, int], bool],
    ) -> "TypeFingerprint":
        atoms, eq_pairs, _, _ = _layout(arity, arities)
        bits = 0
        for k, (si, t) in enumerate(atoms):
            if atom_fn(si, t):
                bits |= 1 << k
        base = len(atoms)
        for k, (i, j) in enumerate(eq_pairs):
            if eq_fn(i, j):
                bits |= 1 << (base + k)
        return cls(arity, tuple(sublanguage), tuple(arities), bits)

    def restrict(self, m: int) -> "TypeFingerprint":
        """Fingerprint of the first m coordinates."""
        if not 0 <= m <= self.arity:
            raise LogicError("restriction arity out of range")
        return TypeFingerprint.build(
            m,
            self.sublanguage,
            self.arities,
            lambda si, t: self.has(si, t),
            lambda i, j: self.eq_bit(i, j),
        )

    def permuted(self, sigma: Permutation) -> "TypeFingerprint":
        """Fingerprint of the rearranged tuple b with b[i] = a[sigma(i)]."""
        if len(sigma) != self.arity:
            raise LogicError("permutation size differs from fingerprint arity")
        return TypeFingerprint.build(
            self.arity,
            self.sublanguage,
            self.arities,
            lambda si, t: self.has(si, tuple(sigma.mapping[x] for x in t)),
            lambda i, j: self.eq_bit(sigma.mapping[i], sigma.mapping[j]),
        )

    def models(self, phi: QfFormula, assignment: tuple[int, ...] | None = None) -> bool:
        """Evaluate a quantifier-free formula against this type.

        Variables denote tuple coordinates; `assignment` remaps variable
        v to coordinate assignment[v] (identity when omitted). Relation
        symbols in phi are ambient signature indices and must belong to
        the sublanguage.
        """
        pos_of = {s: k for k, s in enumerate(self.sublanguage)}

        def rec(f: QfFormula) -> bool:
            if isinstance(f, Rel):
                if f.sym not in pos_of:
                    raise LogicError(f"symbol {f.sym} outside fingerprint sublanguage")
                coords = tuple(
                    (assignment[v] if assignment is not None else v) for v in f.args
                )
                return self.has(pos_of[f.sym], coords)
            if isinstance(f, Eq):
                a = assignment[f.left] if assignment is not None else f.left
                b = assignment[f.right] if assignment is not None else f.right
                return self.eq_bit(a, b)
            if isinstance(f, Not):
                return not rec(f.sub)
            if isinstance(f, And):
                return all(rec(s) for s in f.subs)
            if isinstance(f, Or):
                return any(rec(s) for s in f.subs)
            raise LogicError(f"not a quantifier-free formula: {f!r}")

        return rec(phi)


def qf_fingerprint(
    structure: FiniteStructure,
    tup: tuple[int, ...],
    sublanguage: tuple[int, ...] | None = None,
) -> TypeFingerprint:
    """Fingerprint of a concrete tuple in a structure."""
    if sublanguage is None:
        sublanguage = tuple(range(len(structure.signature)))
    for a in tup:
        if not 0 <= a < structure.domain_size:
            raise LogicError("tuple element out of domain")
    arities = tuple(structure.signature.arity(s) for s in sublanguage)
    return TypeFingerprint.build(
        len(tup),
        tuple(sublanguage),
        arities,
        lambda si, t: structure.holds(sublanguage[si], tuple(tup[x] for x in t)),
        lambda i, j: tup[i] == tup[j],
    )


def structure_from_fingerprint(
    fp: TypeFingerprint, signature: Signature, domain_size: int
) -> FiniteStructure:
    """Read a structure off a full-tuple fingerprint.

    The fingerprint must describe the identity tuple (0..n-1) over a
    sublanguage of `signature`; its atom bits then enumerate every fact.
    """
    if fp.arity != domain_size:
        raise LogicError("fingerprint arity differs from domain size")
    atoms, _, _, _ = _layout(fp.arity, fp.arities)
    facts = set()
    for k, (si, t) in enumerate(atoms):
        if (fp.bits >> k) & 1:
            facts.add((fp.sublanguage[si], t))
    return FiniteStructure(signature, domain_size, frozenset(facts))


# ---------------------------------------------------------------------------
# automorphisms and definable closure
# ---------------------------------------------------------------------------


def _facts_by_symbol(structure: FiniteStructure) -> dict[int, set[tuple[int, ...]]]:
    out: dict[int, set[tuple[int, ...]]] = {}
    for sym, args in structure.facts:
        out.setdefault(sym, set()).add(args)
    return out


def _iter_automorphisms(
    structure: FiniteStructure,
    forced: dict[int, int],
    bound: int,
) -> Iterator[Permutation]:
    """Backtracking enumeration of automorphisms extending `forced`.

    Prunes a partial map as soon as some atom over the assigned domain
    disagrees with its image.
    """
    n = structure.domain_size
    if n > bound:
        raise DomainBoundExceeded(f"domain size {n} exceeds bound {bound}")
    sig = structure.signature
    facts = _facts_by_symbol(structure)

    order = sorted(forced) + [v for v in range(n) if v not in forced]
    img: dict[int, int] = {}
    used = [False] * n

    def consistent(v: int) -> bool:
        dom = list(img)
        for sym in range(len(sig)):
            r = sig.arity(sym)
            sym_facts = facts.get(sym, set())
            if r == 0:
                continue
            for t in product(dom, repeat=r):
                if v not in t:
                    continue
                mapped = tuple(img[x] for x in t)
                if (t in sym_facts) != (mapped in sym_facts):
                    return False
        return True

    def extend(pos: int) -> Iterator[Permutation]:
        if pos == n:
            yield Permutation(tuple(img[v] for v in range(n)))
            return
        v = order[pos]
        candidates = [forced[v]] if v in forced else [c for c in range(n) if not used[c]]
        for c in candidates:
            if used[c]:
                continue
            img[v] = c
            used[c] = True
            if consistent(v):
                yield from extend(pos + 1)
            used[c] = False
            del img[v]

    yield from extend(0)


def automorphisms(structure: FiniteStructure, bound: int = 10) -> list[Permutation]:
    """All automorphisms, by pruned backtracking. Raises beyond `bound`."""
    return list(_iter_automorphisms(structure, {}, bound))


def automorphisms_bruteforce(structure: FiniteStructure, bound: int = 6) -> list[Permutation]:
    """Oracle: filter all n! permutations. Exhaustive cross-check only."""
    n = structure.domain_size
    if n > bound:
        raise DomainBoundExceeded(f"domain size {n} exceeds bound {bound}")
    from itertools import permutations as all_perms

    out = []
    for p in all_perms(range(n)):
        sigma = Permutation(p)
        if apply_permutation(structure, sigma) == structure:
            out.append(sigma)
    return out


def group_dcl_trivial(
    structure: FiniteStructure, fixed: Iterable[int], target: int, bound: int = 10
) -> bool:
    """True iff some automorphism fixes `fixed` pointwise and moves `target`.

    This is the group-theoretic "b is not definable over A" test: a True
    answer exhibits an A-fixing automorphism with sigma(b) != b.
    """
    n = structure.domain_size
    fixed = set(fixed)
    if target in fixed:
        return False
    for c in range(n):
        if c == target:
            continue
        forced = {a: a for a in fixed}
        forced[target] = c
        for _ in _iter_automorphisms(structure, forced, bound):
            return True
    return False


# ---------------------------------------------------------------------------
# JSON Lines serialization
# ---------------------------------------------------------------------------


def structure_to_jsonl(structure: FiniteStructure) -> str:
    """Header record with domain size and signature, then one record per fact.

    Facts are sorted by (symbol index, argument tuple), so the encoding
    is canonical: equal structures serialize to identical bytes.
    """
    sig = structure.signature
    lines = [
        json.dumps(
            {
                "domain_size": structure.domain_size,
                "signature": [{"name": n, "arity": a} for n, a in sig.symbols],
            },
            separators=(",", ":"),
        )
    ]
    for sym, args in structure.facts_sorted():
        lines.append(
            json.dumps({"rel": sig.name(sym), "args": list(args)}, separators=(",", ":"))
        )
    return "\n".join(lines) + "\n"


def structure_from_jsonl(text: str) -> FiniteStructure:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise LogicError("empty structure document")
    header = json.loads(lines[0])
    sig = Signature(tuple((s["name"], int(s["arity"])) for s in header["signature"]))
    facts = set()
    for ln in lines[1:]:
        rec = json.loads(ln)
        facts.add((sig.index_of(rec["rel"]), tuple(int(a) for a in rec["args"])))
    return FiniteStructure(sig, int(header["domain_size"]), frozenset(facts))
