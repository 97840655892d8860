"""Deliberately broken samplers for exercising the audit machinery.

These are negative controls: each one violates exactly one contract the
real gallery upholds, so the coherence / invariance / collision checks
have something to catch. None of them are reachable from CLI spec
strings.
"""

from __future__ import annotations

from .engine import AhkSampler
from .logic import Signature, TypeFingerprint
from .seeds import XiFamily


class BrokenSupersetSampler(AhkSampler):
    """Reads randomness attached to the whole domain, not per element.

    P(i) consults the value of the full index set {0..n-1}, so the
    answer for element i changes when the ambient n does: restriction
    coherence fails with a concrete counterexample at almost every seed.
    """

    def __init__(self):
        self.signature = Signature((("P", 1),))
        self.name = "broken-superset"

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        everyone = frozenset(range(n))

        def atom(sym: int, t: tuple[int, ...]) -> bool:
            return xs.value(everyone, stream=t[0]) < 0.5

        return self._fingerprint(n, atom)


class IndexKeyedSampler(AhkSampler):
    """Biases element i by the parity of the raw index i.

    Even positions get P with probability 0.9, odd with 0.1. The law is
    not permutation-invariant, so both the equivariance half of
    coherence_check and invariance_test flag it loudly.
    """

    def __init__(self, p_even: float = 0.9, p_odd: float = 0.1):
        self.p_even = p_even
        self.p_odd = p_odd
        self.signature = Signature((("P", 1),))
        self.name = "broken-index-keyed"

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        def atom(sym: int, t: tuple[int, ...]) -> bool:
            i = t[0]
            threshold = self.p_even if i % 2 == 0 else self.p_odd
            return xs.value((i,)) < threshold

        return self._fingerprint(n, atom)


class EmptySampler(AhkSampler):
    """No facts at all: every tuple realizes the all-false type.

    Useful as the degenerate end of collision statistics (estimate is
    exactly 1) and as a smoke test for serialization of structures
    without facts.
    """

    def __init__(self, arity: int = 2):
        self.signature = Signature((("R0", arity),))
        self.name = "empty"

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        def atom(sym: int, t: tuple[int, ...]) -> bool:
            return False

        return self._fingerprint(n, atom)
