"""Deposits, slashing, the winner lottery, utilities and equilibrium checks.

The winner of the reward lottery gets its own deposit back even when it
appears among the slashed equivocators: a baiter's expected payoff is
then ``R/m - (m-1)L/m``, which is what the deposit minima are built on.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .consensus import ConsensusConfig, ConsensusMachine
from .core import (
    DomainError,
    InvariantViolation,
    Kind,
    KeyRegistry,
    SystemParams,
    TerminalOutcome,
    canonical,
    digest,
)
from .regime import classify_regime, deposit_min, reward_amount, u_bait, u_fork
from .regime import self_trigger_margin  # noqa: F401  (re-exported)
from .scheduler import AdversarialStrategic, Engine


# ----------------------------------------------------------------- ledger

@dataclass
class Ledger:
    balances: dict[int, Fraction]
    deposits_held: dict[int, Fraction]
    slashed: frozenset[int] = frozenset()
    winner: Optional[int] = None
    reward: Fraction = Fraction(0)
    loot: Fraction = Fraction(0)
    forfeited: Fraction = Fraction(0)  # slashed deposits kept after paying the reward

    def total(self) -> Fraction:
        return sum(self.balances.values(), Fraction(0)) + sum(self.deposits_held.values(), Fraction(0))

    def to_json(self) -> dict:
        return {
            "balances": {str(p): str(v) for p, v in sorted(self.balances.items())},
            "deposits_held": {str(p): str(v) for p, v in sorted(self.deposits_held.items())},
            "slashed": sorted(self.slashed),
            "winner": self.winner,
            "reward": str(self.reward),
            "loot": str(self.loot),
            "forfeited": str(self.forfeited),
        }


TERMS = ("consensus", "loot", "reward", "slash")


@dataclass
class UtilityReport:
    terms: dict[int, dict[str, Fraction]]

    @property
    def utilities(self) -> dict[int, Fraction]:
        return {p: sum(t.values(), Fraction(0)) for p, t in self.terms.items()}

    def to_json(self) -> dict:
        return {str(p): {"u": str(sum(t.values(), Fraction(0))), **{k: str(t[k]) for k in TERMS}}
                for p, t in sorted(self.terms.items())}


def settle(outcome: TerminalOutcome, params: SystemParams,
           initial: Optional[Mapping[int, Fraction]] = None) -> tuple[Ledger, UtilityReport]:
    """Collect deposits, slash every culprit, pay the winner, return the
    rest, and evaluate each player's utility term by term."""
    n, f = params.n, params.f
    L, G = params.deposit, params.gain
    start = {p: Fraction((initial or {}).get(p, 0)) for p in range(n)}
    balances = {p: start[p] - L for p in range(n)}
    held = {p: L for p in range(n)}
    S = frozenset(outcome.slashed)
    w = outcome.winner
    if w is not None and len(S) < 3 * f + 1:
        raise InvariantViolation("winner chosen without a detected fork")
    R = reward_amount(f, L) if w is not None else Fraction(0)
    pool = Fraction(0)
    for p in sorted(S):
        if p == w:
            continue
        pool += held[p]
        held[p] = Fraction(0)
    if R > pool:
        raise InvariantViolation("slashed deposits do not cover the reward")
    loot = Fraction(0)
    if outcome.a >= 2 and outcome.k_loot:
        loot = (outcome.a - 1) * G
        share = loot / len(outcome.k_loot)
        for p in outcome.k_loot:
            balances[p] += share
    if w is not None:
        balances[w] += R
    for p in range(n):
        balances[p] += held[p]
        held[p] = Fraction(0)
    ledger = Ledger(balances, held, S, w, R, loot, pool - R)

    terms: dict[int, dict[str, Fraction]] = {}
    kappa = len(outcome.k_loot)
    for p in range(n):
        terms[p] = {
            "consensus": Fraction(1 if outcome.cons == 1 else 0),
            "loot": (outcome.a - 1) * G / kappa if outcome.a >= 2 and p in outcome.k_loot else Fraction(0),
            "reward": R if p == w else Fraction(0),
            "slash": -L if p in S and p != w else Fraction(0),
        }
    return ledger, UtilityReport(terms)


def check_conservation(ledger: Ledger, params: SystemParams,
                       initial: Optional[Mapping[int, Fraction]] = None) -> bool:
    before = sum((Fraction(v) for v in (initial or {}).values()), Fraction(0))
    return ledger.total() == before + ledger.loot - ledger.forfeited and ledger.forfeited >= 0


# -------------------------------------------------------- winner consensus

@dataclass(frozen=True)
class SafetyViolation:
    """Two correct residual players settled on different winners."""

    winners: Mapping[int, int]


@dataclass(frozen=True)
class NoBaiter:
    """Fraud was detected but nobody qualified for the reward."""


@dataclass
class WcResult:
    outcome: Union[int, SafetyViolation, NoBaiter, None]
    decided_sets: dict[int, tuple[int, ...]] = field(default_factory=dict)
    n_residual: int = 0
    c_residual: int = 0
    attacked: bool = False
    ticks: int = 0

    @property
    def winner(self) -> Optional[int]:
        return self.outcome if isinstance(self.outcome, int) else None


def encode_set(cands: Iterable[int]) -> bytes:
    return canonical(sorted(cands))


def decode_set(raw: bytes) -> Optional[tuple[int, ...]]:
    try:
        got = json.loads(raw)
    except ValueError:
        return None
    if not isinstance(got, list) or not got or not all(isinstance(x, int) for x in got):
        return None
    if got != sorted(set(got)):
        return None
    return tuple(got)


def pick_winner(cands: tuple[int, ...], decided_value: bytes, seed: int) -> int:
    h = digest(encode_set(cands) + decided_value + str(seed).encode())
    return cands[int.from_bytes(h, "big") % len(cands)]


def residual_config(residual: Iterable[int], view_ticks: int = 8) -> ConsensusConfig:
    members = tuple(sorted(residual))
    n = len(members)
    t = (n - 1) // 3
    q = math.ceil((n + t + 1) / 2)
    return ConsensusConfig(members, q, t, view_ticks, Kind.WINNER_VOTE, view_base=1_000_000)


class _WcActor:
    def __init__(self, machine):
        self.m = machine

    def on_message(self, engine, msg):
        self.m.on_message(engine, msg.src, msg.kind, msg.payload)

    def on_activate(self, engine, pid):
        self.m.tick(engine)


class _WcSplit:
    """Coalition residual members run one persona per half of the correct
    residual players and propose a different singleton in each."""

    def __init__(self, cfg, registry, honest, coalition, cands, rng):
        self.cfg = cfg
        self.honest = sorted(honest)
        half = len(self.honest) // 2
        self.worlds = [self.honest[:half], self.honest[half:]]
        self.world_of = {p: b for b, w in enumerate(self.worlds) for p in w}
        self.coalition = sorted(coalition)
        self.rng = rng
        self.tags: dict[int, int] = {}
        self.engine = None
        self.personas: dict[int, list] = {}
        for p in self.coalition:
            self.personas[p] = []
            for b in (0, 1):
                m = ConsensusMachine(p, registry.signer(p), registry, cfg, encode_set([cands[b]]),
                                     self._sender(p, b), lambda e, v, c: None,
                                     validity=lambda v: decode_set(v) is not None)
                self.personas[p].append(m)

    def _sender(self, pid, b):
        def send(kind, payload):
            for d in self.worlds[b]:
                self.engine.send(pid, d, kind, payload)
            for d in self.coalition:
                self.tags[self.engine.send(pid, d, kind, payload)] = b
        return send

    def start(self, engine):
        self.engine = engine
        for ms in self.personas.values():
            for m in ms:
                m.start(engine)

    def on_message(self, engine, msg):
        b = self.tags.pop(msg.mid, None)
        if b is None:
            b = self.world_of.get(msg.src)
        if b is None:
            return
        self.personas[msg.dst][b].on_message(engine, msg.src, msg.kind, msg.payload)

    def on_activate(self, engine, pid):
        for m in self.personas.get(pid, ()):
            m.tick(engine)

    def delay(self, engine, msg):
        if engine.now < engine.gst and msg.src in self.world_of:
            db = self.world_of.get(msg.dst)
            if db is not None and db != self.world_of[msg.src]:
                return engine.gst + engine.delta
        return engine.now + self.rng.randint(1, 2)


class _WcQuiet:
    """Coalition residual members that simply follow the protocol."""

    def __init__(self, rng):
        self.rng = rng

    def delay(self, engine, msg):
        return engine.now + self.rng.randint(1, 2)


def winner_consensus(candidates: Mapping[int, Iterable[int]], residual: Iterable[int],
                     coalition: Iterable[int], *, n: int, seed: int, decided_value: bytes,
                     gst: int = 0, delta: int = 1, adversary: bool = True,
                     view_ticks: int = 8, max_ticks: Optional[int] = None,
                     registry: Optional[KeyRegistry] = None) -> WcResult:
    """Agree on a candidate set among the residual players and draw the
    winner from it.

    ``candidates`` maps each correct residual player to the candidate set
    it validated. Coalition residual members split the correct players
    when ``adversary`` is set and they hold at least a third of the
    residual set and the view-1 proposer.
    """
    residual = sorted(residual)
    coal = sorted(set(coalition) & set(residual))
    honest = [p for p in residual if p not in coal]
    n_res, c_res = len(residual), len(coal)
    union = sorted(set().union(*[set(v) for v in candidates.values()])) if candidates else []
    if not union:
        return WcResult(NoBaiter(), {}, n_res, c_res)
    if not honest:
        return WcResult(union[0], {}, n_res, c_res)
    cfg = residual_config(residual, view_ticks)
    registry = registry or KeyRegistry(n, seed)
    rng = random.Random(f"{seed}:wc")
    attack = (adversary and 3 * c_res >= n_res and len(union) >= 2
              and cfg.proposer(1) in coal and c_res >= 2 * cfg.quorum - n_res)
    hook = _WcSplit(cfg, registry, honest, coal, union, rng) if attack else _WcQuiet(rng)
    engine = Engine(n, AdversarialStrategic(gst, delta, hook=hook), seed, correct=honest,
                    max_ticks=max_ticks, log_events=False)
    decided: dict[int, tuple[int, ...]] = {}
    actors: dict = {}

    def make(pid):
        mine = tuple(sorted(candidates.get(pid, ())))
        allowed = set(mine)

        def valid(v):
            got = decode_set(v)
            return got is not None and set(got) <= allowed

        def done_cb(engine, value, cert, pid=pid):
            decided[pid] = decode_set(value)

        def send(kind, payload, pid=pid):
            engine.broadcast(pid, kind, payload, targets=residual)

        return ConsensusMachine(pid, registry.signer(pid), registry, cfg,
                                encode_set(mine or union), send, done_cb, validity=valid)

    machines = {p: make(p) for p in honest}
    for p, m in machines.items():
        actors[p] = _WcActor(m)
    if attack:
        for p in coal:
            actors[p] = hook
        hook.start(engine)
    else:
        for p in coal:
            m = make(p)
            m.validity = lambda v: decode_set(v) is not None
            actors[p] = _WcActor(m)
            m.start(engine)
    for m in machines.values():
        m.start(engine)
    engine.run(actors, lambda: len(decided) == len(honest),
               lambda: [p for p in honest if p not in decided])
    if len(decided) < len(honest):
        return WcResult(None, decided, n_res, c_res, attack, engine.now)
    winners = {p: pick_winner(s, decided_value, seed) for p, s in decided.items()}
    if len(set(winners.values())) > 1 or len(set(decided.values())) > 1:
        return WcResult(SafetyViolation(winners), decided, n_res, c_res, attack, engine.now)
    return WcResult(next(iter(winners.values())), decided, n_res, c_res, attack, engine.now)


# ------------------------------------------------------------ equilibrium

@dataclass(frozen=True)
class EquilibriumReport:
    f: int
    k: int
    t: int
    m: int
    a_bar: int
    deposit: Fraction
    gain: Fraction
    u_bait: Fraction
    u_fork: Fraction
    mc_mean: float
    mc_se: float
    trials: int

    @property
    def gap(self) -> Fraction:
        return self.u_bait - self.u_fork

    @property
    def dominant(self) -> bool:
        return self.u_bait > self.u_fork

    @property
    def mc_within_3se(self) -> bool:
        err = abs(self.mc_mean - float(self.u_bait))
        return err <= 3 * self.mc_se + 1e-12

    def to_json(self) -> dict:
        return {"f": self.f, "k": self.k, "t": self.t, "m": self.m, "a_bar": self.a_bar,
                "deposit": str(self.deposit), "u_bait": str(self.u_bait), "u_fork": str(self.u_fork),
                "gap": str(self.gap), "mc_mean": self.mc_mean, "mc_se": self.mc_se,
                "trials": self.trials}


def baiter_lottery(f: int, m: int, L: float, trials: int, seed: int = 0) -> np.ndarray:
    """Payoffs of baiter 0 over ``trials`` uniform draws of the winner
    among ``m`` baiters."""
    rng = np.random.default_rng(seed)
    win = rng.integers(0, m, size=trials) == 0
    return np.where(win, 3 * f * L, -L)


def equilibrium_report(params: SystemParams, k: int, t: int, a_bar: int,
                       L: Optional[Fraction] = None, trials: int = 100_000,
                       seed: int = 0) -> EquilibriumReport:
    f = params.f
    C = k + t
    rep = classify_regime(C, t, f)
    if k < 1:
        raise DomainError("need at least one rational member")
    L = params.deposit if L is None else Fraction(L)
    m = rep.m
    ub = u_bait(f, m, L)
    uf = u_fork(k, a_bar, params.gain)
    pay = baiter_lottery(f, m, float(L), trials, seed)
    se = float(pay.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return EquilibriumReport(f, k, t, m, a_bar, L, params.gain, ub, uf, float(pay.mean()), se, trials)


def table_deposit(k: int, m: int, f: int, a_bar: int = 2) -> Fraction:
    """Smallest two-significant-digit deposit strictly above the minimum."""
    d = deposit_min(k, m, f, a_bar)
    e = math.floor(math.log10(d)) - 1
    step = Fraction(10) ** e
    q = d / step
    up = math.floor(q) + 1
    return up * step
