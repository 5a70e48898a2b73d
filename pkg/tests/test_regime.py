"""Closed forms against frozen oracle values and brute-force checks."""

from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from snare.core import DomainError
from snare.kernels import max_undetected
from snare.regime import (
    RegimeName,
    baiting_threshold,
    branch_threshold,
    classify_regime,
    deposit_min,
    fixed_reward_deposit,
    impossibility_gain_threshold,
    kt_feasible,
    min_blocking,
    regime_bounds,
    reward_amount,
    self_trigger_margin,
    u_bait,
    u_fork,
    undetected_bound,
    undetected_bound_closing_expr,
    wc_feasible,
    wc_limit,
)


# Table 1 at f=20, printed values
@pytest.mark.parametrize("a,expected", [(2, 61), (3, 71), (4, 75), (5, 76)])
def test_branch_threshold_table1(a, expected):
    assert branch_threshold(101, 81, a) == expected


def test_branch_threshold_two_is_2h_minus_n():
    for f in range(1, 30):
        n, h = 5 * f + 1, 4 * f + 1
        assert branch_threshold(n, h, 2) == 2 * h - n == 3 * f + 1


def test_branch_threshold_3f1_model():
    assert branch_threshold(99, 66, 2) == 33


def test_branch_threshold_domain():
    with pytest.raises(DomainError):
        branch_threshold(101, 81, 1)
    with pytest.raises(DomainError):
        branch_threshold(10, 5, 2)


@given(st.integers(1, 20), st.integers(2, 200))
def test_branch_threshold_monotone_below_h(f, a):
    n, h = 5 * f + 1, 4 * f + 1
    assert branch_threshold(n, h, a) <= branch_threshold(n, h, a + 1) <= h


def test_branch_threshold_limit_is_h():
    # (a*h - n)/(a-1) = h - (n-h)/(a-1): within one player of h once a-1 > n-h
    for f in (1, 5, 20):
        n, h = 5 * f + 1, 4 * f + 1
        assert branch_threshold(n, h, 10**6) == h
        assert branch_threshold(n, h, n - h + 2) == h


@pytest.mark.parametrize("C,f,m", [(61, 20, 1), (73, 20, 7), (4, 1, 1), (10, 3, 1), (12, 3, 2)])
def test_min_blocking(C, f, m):
    assert min_blocking(C, f) == m


def test_min_blocking_domain():
    with pytest.raises(DomainError):
        min_blocking(60, 20)


@pytest.mark.parametrize("k,t,f,m", [(45, 20, 20, 3), (51, 20, 20, 6), (1, 0, 20, 1)])
def test_baiting_threshold(k, t, f, m):
    assert baiting_threshold(k, t, f) == m


@pytest.mark.parametrize("k,m,f,a,exact", [
    (41, 1, 20, 2, Fraction(1, 2460)),
    (51, 6, 20, 3, Fraction(12, 2805)),
    (43, 2, 20, 2, Fraction(2, 2537)),
])
def test_deposit_min(k, m, f, a, exact):
    assert deposit_min(k, m, f, a) == exact


def test_deposit_min_domain():
    with pytest.raises(DomainError):
        deposit_min(41, 61, 20)


@pytest.mark.parametrize("C,t,f,ok,n_res,c_res", [
    (74, 20, 20, True, 40, 13),
    (75, 20, 20, False, 40, 14),
    (4, 0, 1, True, 2, 0),
])
def test_wc_feasible(C, t, f, ok, n_res, c_res):
    assert tuple(wc_feasible(C, t, f)) == (ok, n_res, c_res)


def test_wc_feasible_domain():
    with pytest.raises(DomainError):
        wc_feasible(60, 0, 20)


@given(st.integers(1, 64), st.data())
def test_wc_verdict_matches_limit(f, data):
    C = data.draw(st.integers(3 * f + 1, 5 * f + 1))
    v = wc_feasible(C, 0, f)
    assert v.feasible == (3 * v.c_residual < v.n_residual) == (C <= wc_limit(f))


def test_wc_strict_t_flag_reported_separately():
    v = wc_feasible(74, 20, 20)
    assert v.feasible and not v.strict_t_ok


@pytest.mark.parametrize("C,t,f,name", [
    (20, 20, 20, RegimeName.BFT),
    (60, 20, 20, RegimeName.NOFORK),
    (70, 20, 20, RegimeName.DOUBLE),
    (74, 20, 20, RegimeName.TRIPLE),
    (75, 20, 20, RegimeName.BEYOND_WC),
])
def test_classify_regime(C, t, f, name):
    assert classify_regime(C, t, f).regime is name


def test_classify_regime_details():
    r = classify_regime(60, 20, 20)
    assert r.d_min == 0 and r.a_max == 1
    r = classify_regime(70, 20, 20)
    assert r.a_max == 2
    r = classify_regime(74, 20, 20)
    assert r.a_max == 3 and r.m == 7
    assert f"{float(r.d_min):.4f}" == "0.0048"


def test_classify_flags_byzantine_excess():
    r = classify_regime(40, 21, 20)
    assert not r.byzantine_feasible


@pytest.mark.parametrize("f", range(1, 65))
def test_regimes_are_consecutive(f):
    b = list(regime_bounds(f).values())
    assert b[0][0] == 0 and b[-1][1] == 5 * f + 1
    for (lo1, hi1), (lo2, hi2) in zip(b, b[1:]):
        assert hi1 + 1 == lo2


def test_kt_feasible():
    assert kt_feasible(101, 40, 20)["nofork"]
    assert kt_feasible(101, 54, 20)["triple"]
    assert not any(kt_feasible(101, 0, 21).values())


@pytest.mark.parametrize("n,h,C,a,x", [(101, 81, 75, 4, 0), (101, 81, 61, 2, 0), (101, 81, 81, 2, 20)])
def test_undetected_bound(n, h, C, a, x):
    assert undetected_bound(n, h, C, a) == x


def test_undetected_closing_expression_disagrees():
    assert undetected_bound_closing_expr(101, 81, 75, 4) == 18


def test_undetected_bound_domain():
    with pytest.raises(DomainError):
        undetected_bound(101, 81, 60, 2)


@pytest.mark.parametrize("a", [2, 3])
def test_undetected_bound_matches_brute_force_f1(a):
    n, h = 6, 5
    for C in range(branch_threshold(n, h, a), n + 1):
        assert max_undetected(n, h, C, a) == undetected_bound(n, h, C, a), (C, a)


def test_undetected_bound_matches_brute_force_f2():
    n, h = 11, 9
    for C in range(branch_threshold(n, h, 2), n + 1):
        assert max_undetected(n, h, C, 2) == undetected_bound(n, h, C, 2)


def test_fixed_reward_deposit():
    assert fixed_reward_deposit(2, 20) == Fraction(1, 61)
    assert fixed_reward_deposit(3, 20) == Fraction(2, 61)
    assert fixed_reward_deposit(2, 1) == Fraction(1, 4)
    # well above the largest lottery-version double-spend deposit (0.18%)
    assert fixed_reward_deposit(2, 20) > 7 * Fraction(18, 10000)


def test_reward_and_margin():
    assert reward_amount(20, Fraction(1)) == 60
    assert self_trigger_margin(61, 20, Fraction(1)) == 0
    assert self_trigger_margin(74, 20, Fraction(1)) == -13
    assert reward_amount(1, Fraction(0)) == 0


def test_impossibility_gain_threshold():
    assert impossibility_gain_threshold(41, Fraction(0), Fraction(0)) == 41
    assert Fraction(42, 41) - 0 > 1
    assert impossibility_gain_threshold(1, Fraction(0), Fraction(0)) == 1
    assert impossibility_gain_threshold(50, Fraction(2), Fraction(1, 2)) == 175


def test_u_bait_u_fork_row1():
    L = Fraction(41, 100000)
    assert u_bait(20, 1, L) > u_fork(41, 2)
    assert round(float(u_bait(20, 1, L)), 4) == 0.0246
    assert round(float(u_fork(41, 2)), 4) == 0.0244
