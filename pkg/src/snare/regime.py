"""Closed-form thresholds, deposit minima and feasibility verdicts.

Everything is exact integer/rational arithmetic. Floats only appear when
tables are formatted for display.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .core import DomainError


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class RegimeName(str, enum.Enum):
    BFT = "BFT"
    NOFORK = "NoFork"
    DOUBLE = "DoubleSpend"
    TRIPLE = "TripleSpend"
    BEYOND_WC = "BeyondWC"


def branch_threshold(n: int, h: int, a: int) -> int:
    """Minimum coalition able to realize ``a`` conflicting branches with
    quorum ``h`` among ``n`` players."""
    if a < 2:
        raise DomainError("branch count must be >= 2")
    if 2 * h <= n:
        raise DomainError("quorums must intersect (2h > n)")
    return _ceil_div(a * h - n, a - 1)


def min_blocking(C: int, f: int) -> int:
    """Fewest defections that destroy every two-branch fork."""
    if C < 3 * f + 1:
        raise DomainError("no fork is possible below 3f+1, blocking set undefined")
    return (C - (3 * f + 1)) // 2 + 1


def baiting_threshold(k: int, t: int, f: int) -> int:
    C = k + t
    if C < 3 * f + 1:
        return 1
    return max(1, min_blocking(C, f))


def deposit_min(k: int, m: int, f: int, a_bar: int = 2) -> Fraction:
    """Deposit fraction of the gain that baiting must strictly exceed."""
    if m > 3 * f:
        raise DomainError("m > 3f leaves a nonpositive denominator")
    if m < 1 or k < 1 or a_bar < 2:
        raise DomainError("need m >= 1, k >= 1, a_bar >= 2")
    return Fraction((a_bar - 1) * m, k * (3 * f - m + 1))


@dataclass(frozen=True)
class WcVerdict:
    feasible: bool
    n_residual: int
    c_residual: int
    strict_t_ok: bool

    def __iter__(self):
        # Allows ``ok, n_res, c_res = wc_feasible(...)``.
        return iter((self.feasible, self.n_residual, self.c_residual))


def wc_limit(f: int) -> int:
    return (11 * f + 2) // 3


def wc_feasible(C: int, t: int, f: int) -> WcVerdict:
    """Can the residual winner consensus tolerate what is left of the
    coalition once 3f+1 equivocators are excluded?"""
    if C < 3 * f + 1:
        raise DomainError("winner consensus only runs after a fork (C >= 3f+1)")
    n_res = 2 * f
    c_res = C - (3 * f + 1)
    return WcVerdict(
        feasible=3 * c_res < n_res,
        n_residual=n_res,
        c_residual=c_res,
        strict_t_ok=3 * t < 2 * f,
    )


@dataclass(frozen=True)
class RegimeReport:
    f: int
    n: int
    C: int
    k: int
    t: int
    regime: RegimeName
    a_max: Optional[int]
    m: int
    d_min: Optional[Fraction]
    wc_feasible: bool
    n_residual: Optional[int]
    c_residual: Optional[int]
    byzantine_feasible: bool

    def to_json(self) -> dict:
        return {
            "f": self.f,
            "n": self.n,
            "C": self.C,
            "k": self.k,
            "t": self.t,
            "regime": self.regime.value,
            "a_max": self.a_max,
            "m": self.m,
            "d_min": None if self.d_min is None else str(self.d_min),
            "wc_feasible": self.wc_feasible,
            "n_residual": self.n_residual,
            "c_residual": self.c_residual,
            "byzantine_feasible": self.byzantine_feasible,
        }


def regime_bounds(f: int) -> dict[RegimeName, tuple[int, int]]:
    """Inclusive coalition-size ranges of each regime."""
    triple_lo = _ceil_div(7 * f + 2, 2)
    return {
        RegimeName.BFT: (0, f),
        RegimeName.NOFORK: (f + 1, 3 * f),
        RegimeName.DOUBLE: (3 * f + 1, triple_lo - 1),
        RegimeName.TRIPLE: (triple_lo, wc_limit(f)),
        RegimeName.BEYOND_WC: (wc_limit(f) + 1, 5 * f + 1),
    }


def classify_regime(C: int, t: int, f: int) -> RegimeReport:
    n = 5 * f + 1
    if not 0 <= t <= C <= n:
        raise DomainError("need 0 <= t <= C <= n")
    k = C - t
    name = next(r for r, (lo, hi) in regime_bounds(f).items() if lo <= C <= hi)
    a_max: Optional[int] = {RegimeName.BFT: 1, RegimeName.NOFORK: 1,
                            RegimeName.DOUBLE: 2, RegimeName.TRIPLE: 3}.get(name)
    h = 4 * f + 1
    if name is RegimeName.BEYOND_WC:
        # Largest a whose threshold the coalition meets; unbounded once C >= h.
        a_max = None
        if C < h:
            a = 2
            while branch_threshold(n, h, a + 1) <= C:
                a += 1
            a_max = a
    m = baiting_threshold(k, t, f) if k >= 1 else 1
    d_min: Optional[Fraction] = Fraction(0)
    if name in (RegimeName.DOUBLE, RegimeName.TRIPLE):
        d_min = deposit_min(k, m, f, a_max) if k >= 1 and m <= 3 * f else None
    elif name is RegimeName.BEYOND_WC:
        d_min = None
    wc_ok, n_res, c_res = (True, None, None)
    if C >= 3 * f + 1:
        wc_ok, n_res, c_res = wc_feasible(C, t, f)
    return RegimeReport(f, n, C, k, t, name, a_max, m, d_min, wc_ok, n_res, c_res,
                        byzantine_feasible=t <= f)


def kt_feasible(n: int, k: int, t: int) -> dict[str, bool]:
    if n % 5 != 1:
        raise DomainError("n must be 5f+1")
    f = (n - 1) // 5
    C = k + t
    return {
        "nofork": C <= 3 * f and t <= f,
        # n > max(5t, 10(k+t)/7), kept in integers
        "double": n > 5 * t and 7 * n > 10 * C,
        "triple": C <= wc_limit(f) and t <= f,
    }


def undetected_bound(n: int, h: int, C: int, a: int) -> int:
    """Most coalition members that can appear in at most one of ``a``
    conflicting certificates.

    Counting: the certificates need at least ``a*h - (n-C)`` coalition
    appearances, while ``x`` single-appearance members cap them at
    ``x + a*(C-x)``.
    """
    if a < 2 or C < branch_threshold(n, h, a) or C > n:
        raise DomainError("coalition cannot realize a branches")
    return max(0, ((a - 1) * C - (a * h - n)) // (a - 1))


def undetected_bound_closing_expr(n: int, h: int, C: int, a: int) -> int:
    """The one-line generalization printed after the worked example.

    Kept only for reporting; it disagrees with the worked count (it gives
    18 at n=101, h=81, C=75, a=4 where the derivation gives 0).
    """
    return (a * n - a * h - n + C) // (a - 1)


def fixed_reward_deposit(a: int, f: int) -> Fraction:
    if a < 2:
        raise DomainError("a must be >= 2")
    return Fraction(a - 1, 3 * f + 1)


def reward_amount(f: int, L: Fraction) -> Fraction:
    L = Fraction(L)
    if L < 0:
        raise DomainError("deposit must be nonnegative")
    return 3 * f * L


def self_trigger_margin(C: int, f: int, L: Fraction) -> Fraction:
    """Reward minus what the rest of the coalition forfeits when one
    member collects it: ``R - (C-1)L``."""
    return reward_amount(f, L) - (C - 1) * Fraction(L)


def impossibility_gain_threshold(k: int, P: Fraction, eps: Fraction) -> Fraction:
    if k < 1 or P < 0 or eps < 0:
        raise DomainError("need k >= 1, P >= 0, eps >= 0")
    return k * (Fraction(P) + 1 + Fraction(eps))


def fork_support_margin(G: Fraction, k: int, P: Fraction) -> Fraction:
    """Payoff of supporting a two-branch fork under punishment-only
    resolution, relative to the honest payoff of 1."""
    return Fraction(G) / k - Fraction(P) - 1


def u_bait(f: int, m: int, L: Fraction) -> Fraction:
    return Fraction(3 * f - m + 1, m) * Fraction(L)


def u_fork(k: int, a_bar: int, G: Fraction = Fraction(1)) -> Fraction:
    return (a_bar - 1) * Fraction(G) / k
