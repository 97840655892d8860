"""Definitional-expansion transform: axiom shapes, roundtrips, omitted types."""

import random

import pytest

from ergodic.logic import FiniteStructure, Signature
from ergodic.morley import (
    Axiom,
    MorleyError,
    axiom_holds,
    canonical_expand,
    canonical_form,
    check_pi2minus,
    morleyize,
    parse_fragment,
    qtype_prefix_realized,
    reduct,
    result_from_json,
    result_to_json,
    verify_reduct_roundtrip,
)
from ergodic.logic import Rel

BASE_R = Signature((("R", 2),))
BASE_P = Signature((("P0", 1), ("P1", 1), ("P2", 1)))

FORALL_EXISTS = "(forall x (exists y (rel R x y)))"
SCHEME_AND = "(forall x (schemeAnd n 3 (rel (P n) x)))"


def _random_structure(rng, signature, size):
    facts = set()
    for sym in range(len(signature)):
        arity = signature.arity(sym)
        for args in _tuples(size, arity):
            if rng.random() < 0.4:
                facts.add((sym, args))
    return FiniteStructure(signature, size, frozenset(facts))


def _tuples(size, arity):
    if arity == 0:
        return [()]
    out = [()]
    for _ in range(arity):
        out = [t + (i,) for t in out for i in range(size)]
    return out


def test_forall_exists_axiom_shapes():
    res = morleyize([parse_fragment(FORALL_EXISTS)], BASE_R)
    assert [(n.name, n.arity) for n in res.nodes] == [("Rf0", 2), ("Rf1", 1), ("Rf2", 0)]
    shapes = [(a.prefix, a.kind, a.label) for a in res.axioms]
    assert shapes == [
        ("AA", 1, "def:Rf0"),
        ("AAE", 8, "def:Rf1"),
        ("AE", 7, "def:Rf2"),
        ("", 0, "assert"),
    ]
    assert [a.prefix for a in res.pithy_axioms] == ["AAE", "AE"]
    assert len(res.universal_axioms) == 2
    assert res.qtypes == ()
    assert check_pi2minus(res.axioms)


def test_every_defining_axiom_names_its_node():
    res = morleyize([parse_fragment(FORALL_EXISTS)], BASE_R)
    for ax in res.axioms:
        node = res.nodes[ax.source]
        if ax.label.startswith("def:"):
            assert ax.label == f"def:{node.name}"


def test_scheme_and_emits_instances_plus_qtype():
    res = morleyize([parse_fragment(SCHEME_AND)], BASE_P)
    kinds = [a.kind for a in res.axioms]
    assert kinds == [1, 1, 1, 5, 5, 5, 7, 0]
    assert all(a.prefix == "A" for a in res.axioms[:6])

    (q,) = res.qtypes
    assert q.pattern == "conj"
    assert q.arity == 1
    # the three materialized instances positively, the scheme symbol negatively
    signs = [(lit.symbol, lit.positive) for lit in q.literals]
    inst_symbols = [res.node_symbol(i) for i in range(3)]
    scheme_symbol = res.node_symbol(3)
    assert signs == [(s, True) for s in inst_symbols] + [(scheme_symbol, False)]
    assert all(lit.args == (0,) for lit in q.literals)
    assert q.tail_index_var == "i0"
    assert q.tail_start == 3


def test_scheme_or_dualizes_the_literals():
    res = morleyize([parse_fragment("(exists x (schemeOr n 3 (rel (P n) x)))")], BASE_P)
    (q,) = res.qtypes
    assert q.pattern == "disj"
    signs = [lit.positive for lit in q.literals]
    assert signs == [False, False, False, True]


def test_canonical_form_is_alpha_invariant():
    a = canonical_form(parse_fragment("(forall x (exists y (rel R x y)))"))
    b = canonical_form(parse_fragment("(forall u (exists w (rel R u w)))"))
    assert a == b
    # swapped argument order is a different formula
    c = canonical_form(parse_fragment("(forall u (exists w (rel R w u)))"))
    assert a != c


def test_canonical_form_orders_by_first_occurrence():
    assert canonical_form(parse_fragment("(rel R a b)")) == canonical_form(
        parse_fragment("(rel R q z)")
    )
    assert canonical_form(parse_fragment("(rel R a a)")) != canonical_form(
        parse_fragment("(rel R a b)")
    )


def test_expansion_reduces_back():
    rng = random.Random(7)
    res = morleyize([parse_fragment(FORALL_EXISTS)], BASE_R)
    for _ in range(20):
        M = _random_structure(rng, BASE_R, rng.randint(1, 4))
        exp = canonical_expand(M, res)
        assert reduct(exp, BASE_R).facts == M.facts
        assert verify_reduct_roundtrip(M, res)


def test_expansion_satisfies_defining_axioms_always():
    rng = random.Random(11)
    res = morleyize([parse_fragment(FORALL_EXISTS)], BASE_R)
    sentence = parse_fragment(FORALL_EXISTS)
    for _ in range(20):
        M = _random_structure(rng, BASE_R, rng.randint(1, 4))
        exp = canonical_expand(M, res)
        for ax in res.axioms:
            if ax.label == "assert":
                # the assertion tracks truth of the original sentence exactly
                from ergodic.morley import eval_fragment

                assert axiom_holds(exp, ax) == eval_fragment(M, sentence, {})
            else:
                assert axiom_holds(exp, ax)


def test_model_expansion_satisfies_everything():
    facts = frozenset((s, (i,)) for s in range(3) for i in range(2))
    M = FiniteStructure(BASE_P, 2, facts)
    res = morleyize([parse_fragment(SCHEME_AND)], BASE_P)
    exp = canonical_expand(M, res)
    assert all(axiom_holds(exp, a) for a in res.axioms)


def test_expansions_omit_the_scheme_qtype():
    res = morleyize([parse_fragment(SCHEME_AND)], BASE_P)
    (q,) = res.qtypes
    rng = random.Random(3)
    for _ in range(10):
        M = _random_structure(rng, BASE_P, rng.randint(1, 4))
        assert qtype_prefix_realized(canonical_expand(M, res), q) == []


def test_handmade_structure_realizes_qtype_prefix():
    res = morleyize([parse_fragment(SCHEME_AND)], BASE_P)
    (q,) = res.qtypes
    lang = res.language
    facts = frozenset({(res.node_symbol(0), (0,)), (res.node_symbol(1), (0,)),
                       (res.node_symbol(2), (0,))})
    M = FiniteStructure(lang, 1, facts)
    assert qtype_prefix_realized(M, q) == [(0,)]


def test_pi2minus_rejects_deeper_prefixes():
    ok = Axiom("AAE", Rel(0, (0,)), 7, 0, "x")
    assert check_pi2minus([ok])
    assert not check_pi2minus([Axiom("AEE", Rel(0, (0,)), 7, 0, "x")])
    assert not check_pi2minus([Axiom("EA", Rel(0, (0,)), 7, 0, "x")])
    assert not check_pi2minus([Axiom("AEA", Rel(0, (0,)), 7, 0, "x")])


def test_json_roundtrip_reproduces_result():
    res = morleyize([parse_fragment(SCHEME_AND)], BASE_P)
    back = result_from_json(result_to_json(res))
    assert back.axioms == res.axioms
    assert back.qtypes == res.qtypes
    assert back.language.symbols == res.language.symbols


def test_arity_budget_is_enforced():
    with pytest.raises(MorleyError):
        morleyize([parse_fragment(FORALL_EXISTS)], BASE_R, max_arity=1)


def test_unknown_base_symbol_is_an_error():
    with pytest.raises(MorleyError):
        morleyize([parse_fragment("(forall x (rel Q x))")], BASE_R)
