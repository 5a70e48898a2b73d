from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from snare.core import (
    NIL,
    Certificate,
    CoalitionSpec,
    DomainError,
    Kind,
    KeyRegistry,
    ProofOfFraud,
    Regime,
    SystemParams,
    TerminalOutcome,
    UnknownAuthor,
    culprits,
    detect_equivocation,
    verify_signature,
)


def test_signature_roundtrip(registry):
    s = registry.signer(3).sign(Kind.VOTE, 1, b"x")
    assert verify_signature(s, registry)


def test_tampered_body_fails(registry):
    s = registry.signer(3).sign(Kind.VOTE, 1, b"x")
    forged = type(s)(s.author, s.kind, s.view, b"y", s.signature)
    assert not registry.verify(forged)


def test_signature_bound_to_author(registry):
    s = registry.signer(3).sign(Kind.VOTE, 1, b"x")
    forged = type(s)(4, s.kind, s.view, s.body, s.signature)
    assert not registry.verify(forged)


def test_unknown_author_raises(registry):
    s = registry.signer(3).sign(Kind.VOTE, 1, b"x")
    with pytest.raises(UnknownAuthor):
        registry.verify(type(s)(99, s.kind, s.view, s.body, s.signature))
    with pytest.raises(UnknownAuthor):
        registry.signer(16)


def test_registries_with_other_seeds_disagree():
    a, b = KeyRegistry(6, 1), KeyRegistry(6, 2)
    s = a.signer(0).sign(Kind.VOTE, 1, b"x")
    assert a.verify(s) and not b.verify(s)


def test_equivocation_detected(registry):
    sg = registry.signer(2)
    a, b = sg.sign(Kind.VOTE, 1, b"A"), sg.sign(Kind.VOTE, 1, NIL)
    pofs = detect_equivocation({a, b})
    assert culprits(pofs) == {2}
    assert pofs[0].verify(registry)


def test_no_equivocation_across_views_or_kinds(registry):
    sg = registry.signer(2)
    stmts = {sg.sign(Kind.VOTE, 1, b"A"), sg.sign(Kind.VOTE, 2, b"B"),
             sg.sign(Kind.HASH_CERT, 1, b"C")}
    assert detect_equivocation(stmts) == []


def test_pof_with_equal_bodies_is_invalid(registry):
    s = registry.signer(1).sign(Kind.VOTE, 1, b"A")
    assert not ProofOfFraud(1, s, s).verify(registry)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(1, 3), st.sampled_from([b"A", b"B", NIL])),
                max_size=30))
def test_detection_is_exact(entries):
    reg = KeyRegistry(6, 0)
    stmts = {reg.signer(a).sign(Kind.VOTE, v, body) for a, v, body in entries}
    bodies = {}
    for a, v, body in entries:
        bodies.setdefault((a, v), set()).add(body)
    expected = {a for (a, v), bs in bodies.items() if len(bs) > 1}
    pofs = detect_equivocation(stmts)
    assert culprits(pofs) == expected
    assert all(p.verify(reg) for p in pofs)


def test_certificate_validity(registry):
    stmts = tuple(registry.signer(i).sign(Kind.VOTE, 1, b"v") for i in range(5))
    cert = Certificate(b"v", 1, stmts)
    assert cert.is_valid(registry, 5)
    assert not cert.is_valid(registry, 6)
    dup = Certificate(b"v", 1, stmts[:4] + (stmts[0],))
    assert not dup.is_valid(registry, 4)
    mixed = Certificate(b"w", 1, stmts)
    assert not mixed.is_valid(registry, 5)


def test_system_params_domain():
    p = SystemParams(20, Fraction(1), Fraction(1, 100), Regime.FORK)
    with pytest.raises(DomainError):
        SystemParams(0)
    assert (p.n, p.h) == (101, 81)
    with pytest.raises(DomainError):
        SystemParams(1, deposit=Fraction(1))  # no-fork deployments hold no deposit


def test_coalition_disjoint():
    with pytest.raises(DomainError):
        CoalitionSpec({1, 2}, {2})
    c = CoalitionSpec({1, 2}, {3})
    assert (c.k, c.t, c.size) == (2, 1, 3)


def test_outcome_json_roundtrip():
    o = TerminalOutcome(1, 2, frozenset({1, 2}), 3, frozenset({1, 2, 3, 4}), {0: b"a", 5: b"b"},
                        wc_violation=True)
    assert TerminalOutcome.from_json(o.to_json()) == o
    assert o.kappa == 2
