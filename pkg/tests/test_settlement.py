from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from snare.core import InvariantViolation, Regime, SystemParams, TerminalOutcome
from snare.regime import deposit_min, min_blocking
from snare.tables import round_places
from snare.settlement import (NoBaiter, SafetyViolation, check_conservation, equilibrium_report, pick_winner,
                              residual_config, self_trigger_margin, settle, table_deposit, winner_consensus)

F20 = Fraction(41, 100000)


def _params(f, L, G=Fraction(1)):
    return SystemParams(f, G, L, Regime.FORK if L else Regime.NOFORK)


def _outcome(cons=1, a=1, k_loot=(), winner=None, slashed=(), decided=None):
    return TerminalOutcome(cons, a, frozenset(k_loot), winner, frozenset(slashed), decided or {})


def test_no_fraud_consensus_only():
    p = _params(1, Fraction(1, 10))
    ledger, rep = settle(_outcome(), p)
    assert all(u == 1 for u in rep.utilities.values())
    assert all(b == 0 for b in ledger.balances.values())


def test_loot_share_one_41st():
    p = _params(20, F20)
    ledger, rep = settle(_outcome(cons=0, a=2, k_loot=range(1, 42)), p)
    assert rep.terms[5]["loot"] == Fraction(1, 41)
    assert round(float(rep.utilities[5]), 4) == 0.0244
    assert rep.utilities[0] == 0


def test_winner_reward_f20():
    p = _params(20, F20)
    ledger, rep = settle(_outcome(winner=1, slashed=range(1, 62)), p)
    assert rep.terms[1]["reward"] == 60 * F20
    assert round(float(60 * F20), 4) == 0.0246
    assert rep.terms[1]["slash"] == 0  # the winner keeps its deposit
    assert rep.terms[2]["slash"] == -F20
    assert ledger.forfeited == 61 * F20 - F20 - 60 * F20 == 0


def test_winner_without_detection_is_invariant_violation():
    with pytest.raises(InvariantViolation):
        settle(_outcome(winner=1, slashed=range(1, 10)), _params(20, F20))


def test_utilities_sum_terms():
    p = _params(1, Fraction(1, 4))
    _, rep = settle(_outcome(cons=0, a=2, k_loot=(1, 2), slashed=(1, 2, 3, 4)), p)
    for pid, t in rep.terms.items():
        assert rep.utilities[pid] == sum(t.values())


@given(st.integers(1, 6), st.data())
@settings(max_examples=100, deadline=None)
def test_conservation(f, data):
    n = 5 * f + 1
    L = Fraction(data.draw(st.integers(1, 50)), 1000)
    a = data.draw(st.integers(1, 3))
    S = data.draw(st.sets(st.integers(0, n - 1), max_size=n))
    w = None
    if len(S) >= 3 * f + 1 and data.draw(st.booleans()):
        w = data.draw(st.sampled_from(sorted(S)))
    k_loot = data.draw(st.sets(st.integers(0, n - 1), max_size=n)) if a >= 2 else set()
    initial = {p: Fraction(data.draw(st.integers(0, 5))) for p in range(n)}
    o = _outcome(cons=int(a == 1), a=a, k_loot=k_loot, winner=w, slashed=S)
    ledger, _ = settle(o, _params(f, L), initial)
    assert check_conservation(ledger, _params(f, L), initial)
    if w is not None:
        assert ledger.reward <= len(S - {w}) * L


@pytest.mark.parametrize("k,m,L,ub,uf", [
    (41, 1, Fraction(41, 100000), "0.0246", "0.0244"),
    (43, 2, Fraction(79, 100000), "0.02331", "0.02326"),
])
def test_equilibrium_rows(k, m, L, ub, uf):
    e = equilibrium_report(SystemParams(20), k, 20, 2, L, trials=100_000, seed=1)
    assert e.m == m and e.dominant
    digits = len(ub.split(".")[1])
    assert round_places(e.u_bait, digits) == ub  # half-up: 0.023305 -> 0.02331
    assert round_places(e.u_fork, digits) == uf
    assert e.mc_within_3se


def test_zero_deposit_fails_dominance():
    e = equilibrium_report(SystemParams(20), 41, 20, 2, Fraction(0), trials=1000)
    assert e.u_bait == 0 and not e.dominant


@pytest.mark.parametrize("lo,hi,a_bar", [(61, 70, 2), (71, 74, 3)])
def test_table_deposits_dominate_and_cut_flips(lo, hi, a_bar):
    flipped = False
    for C in range(lo, hi + 1):
        k = C - 20
        m = min_blocking(C, 20)
        d = table_deposit(k, m, 20, a_bar)
        assert d > deposit_min(k, m, 20, a_bar)
        assert equilibrium_report(SystemParams(20), k, 20, a_bar, d, trials=10).dominant
        flipped |= not equilibrium_report(SystemParams(20), k, 20, a_bar, d * Fraction(9, 10), trials=10).dominant
    assert flipped


def test_table_deposit_row1():
    assert table_deposit(41, 1, 20) == Fraction(41, 100000)


def test_self_trigger_margin():
    assert self_trigger_margin(61, 20, Fraction(1)) == 0
    assert self_trigger_margin(74, 20, Fraction(1)) == -13
    assert self_trigger_margin(4, 1, Fraction(0)) == 0


# ----------------------------------------------------------- winner consensus

def _wc(f, C, seed=0, cands=(1, 2)):
    n = 5 * f + 1
    E = set(range(1, 3 * f + 2))
    residual = [p for p in range(n) if p not in E]
    coal = list(range(3 * f + 2, C + 1))
    honest = [p for p in residual if p not in coal]
    return winner_consensus({p: list(cands) for p in honest}, residual, coal, n=n, seed=seed,
                            decided_value=b"x", gst=60)


def test_residual_config_f20():
    cfg = residual_config(range(40))
    assert (cfg.size, cfg.tolerance, cfg.quorum) == (40, 13, 27)


def test_wc_agrees_at_74():
    for seed in range(5):
        r = _wc(20, 74, seed)
        assert r.winner in (1, 2) and not r.attacked and (r.n_residual, r.c_residual) == (40, 13)


def test_wc_violation_reachable_at_75():
    r = _wc(20, 75)
    assert isinstance(r.outcome, SafetyViolation) and r.c_residual == 14


def test_wc_single_candidate():
    assert _wc(3, 10, cands=(4,)).winner == 4


def test_wc_no_candidate():
    assert isinstance(_wc(3, 10, cands=()).outcome, NoBaiter)


def test_pick_winner_uniform_over_seeds():
    cands = (1, 2, 3, 4)
    counts = Counter(pick_winner(cands, b"v", s) for s in range(8000))
    assert set(counts) == set(cands)
    assert all(abs(c - 2000) < 4 * (8000 * 0.25 * 0.75) ** 0.5 for c in counts.values())
