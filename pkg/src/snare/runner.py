"""Scenario configs, end-to-end runs, run logs and replay."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

from .consensus import AttackInfeasible, ConsensusConfig
from .core import (
    CoalitionSpec,
    DomainError,
    KeyRegistry,
    Regime,
    SystemParams,
    TerminalOutcome,
    culprits,
    detect_equivocation,
)
from .finalization import Bftcr
from .protocol import Player
from .regime import classify_regime, min_blocking
from .scheduler import AdversarialScripted, AdversarialStrategic, Engine, SchedulerPolicy, Synchronous
from .settlement import SafetyViolation, WcResult, settle, table_deposit, winner_consensus
from .strategies import LIBRARY, RunContext, fork_threshold, min_coalition

SCHEMA_VERSION = 1
EXPECT_TAGS = ("expect-fork", "expect-nofork", "expect-safety-violation", "expect-nontermination")


class ConfigError(DomainError):
    """A scenario failed validation; ``problems`` lists every violation."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class ScenarioConfig:
    schema: int = SCHEMA_VERSION
    name: str = "scenario"
    f: int = 1
    k: int = 0
    t: int = 0
    strategy: str = "Honest"
    options: dict = field(default_factory=dict)
    regime: str = "auto"  # auto | nofork | fork
    finalization: str = "auto"  # auto | simple | bftcr | off
    conflict_path: bool = True
    scheduler: str = "strategic"  # strategic | synchronous | random | scripted
    script: list = field(default_factory=list)
    gst: int = 0
    delta: int = 1
    view_ticks: int = 8
    ticks: Optional[int] = None
    seed: int = 0
    gain: str = "1"
    deposit: str = "auto"  # "auto" (table deposit in fork regimes) or a rational
    a_bar: int = 2
    winner_consensus: bool = True
    wc_adversary: bool = True
    inputs: str = "distinct"  # distinct | same
    expect: list = field(default_factory=list)

    # -- derived
    @property
    def C(self) -> int:
        return self.k + self.t

    @property
    def n(self) -> int:
        return 5 * self.f + 1

    @property
    def coalition_ids(self) -> list[int]:
        return list(range(1, self.C + 1))

    def coalition(self) -> CoalitionSpec:
        ids = self.coalition_ids
        return CoalitionSpec(frozenset(ids[: self.k]), frozenset(ids[self.k:]), self.strategy,
                             dict(self.options))

    def resolved_regime(self) -> Regime:
        if self.regime == "auto":
            return Regime.NOFORK if self.C <= 3 * self.f else Regime.FORK
        return Regime(self.regime)

    def resolved_finalization(self) -> str:
        if self.finalization != "auto":
            return self.finalization
        return "simple" if self.resolved_regime() is Regime.NOFORK else "bftcr"

    def resolved_deposit(self) -> Fraction:
        if self.resolved_regime() is Regime.NOFORK:
            return Fraction(0)
        if self.deposit != "auto":
            return Fraction(self.deposit)
        if self.k < 1 or self.C < 3 * self.f + 1:
            return Fraction(0)
        m = max(1, min_blocking(self.C, self.f))
        if m > 3 * self.f:
            return Fraction(0)
        return table_deposit(self.k, m, self.f, self.a_bar) * Fraction(self.gain)

    def params(self) -> SystemParams:
        return SystemParams(self.f, Fraction(self.gain), self.resolved_deposit(), self.resolved_regime())

    # -- (de)serialization
    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        problems = []
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            problems.append(f"unknown fields: {', '.join(unknown)}")
        if d.get("schema") != SCHEMA_VERSION:
            problems.append(f"schema must be {SCHEMA_VERSION}, got {d.get('schema')!r}")
        if problems:
            raise ConfigError(problems)
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)

    def validate(self) -> None:
        p = []
        if not isinstance(self.f, int) or self.f < 1:
            p.append("f must be an integer >= 1")
            raise ConfigError(p)
        if self.k < 0 or self.t < 0 or self.C > self.n:
            p.append(f"need 0 <= k, t and k+t <= n={self.n}")
        if self.strategy not in LIBRARY:
            p.append(f"unknown strategy {self.strategy!r}")
        elif self.C < min_coalition(self.strategy, self.f):
            p.append(f"{self.strategy} needs C >= {min_coalition(self.strategy, self.f)}")
        if self.regime not in ("auto", "nofork", "fork"):
            p.append("regime must be auto, nofork or fork")
        if self.finalization not in ("auto", "simple", "bftcr", "off"):
            p.append("finalization must be auto, simple, bftcr or off")
        if self.scheduler not in ("strategic", "synchronous", "random", "scripted"):
            p.append("scheduler must be strategic, synchronous, random or scripted")
        if self.gst < 0 or self.delta < 1 or self.view_ticks < 2:
            p.append("need gst >= 0, delta >= 1, view_ticks >= 2")
        if self.inputs not in ("distinct", "same"):
            p.append("inputs must be distinct or same")
        bad = [e for e in self.expect if e not in EXPECT_TAGS]
        if bad:
            p.append(f"unknown expectation tags {bad}")
        if self.a_bar < 2:
            p.append("a_bar must be >= 2")
        try:
            Fraction(self.gain)
            if self.deposit != "auto":
                Fraction(self.deposit)
        except (ValueError, ZeroDivisionError):
            p.append("gain and deposit must be rationals")
        if self.regime == "nofork" and self.C > 3 * self.f:
            p.append(f"nofork regime needs C <= 3f = {3 * self.f}")
        if p and self.k >= 0 and self.t >= 0 and self.C <= self.n:
            try:
                rep = classify_regime(self.C, self.t, self.f)
                p.append(f"regime verdict: {json.dumps(rep.to_json(), sort_keys=True)}")
            except DomainError as e:
                p.append(f"regime verdict unavailable: {e}")
        if p:
            raise ConfigError(p)


# ------------------------------------------------------------------ run log

@dataclass
class RunLog:
    header: dict
    events: list
    records: list
    outcome: TerminalOutcome
    settlement: dict
    extras: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        def dump(obj):
            return json.dumps(obj, sort_keys=True, separators=(",", ":"))
        out = [dump({"type": "header", **self.header})]
        out += [dump({"type": "event", **e}) for e in self.events]
        out += [dump({"type": "record", "t": t, "pid": pid, "what": what, "value": v})
                for t, pid, what, v in self.records]
        out.append(dump({"type": "outcome", **self.outcome.to_json()}))
        out.append(dump({"type": "settlement", **self.settlement}))
        out.append(dump({"type": "extras", **self.extras}))
        return out

    def to_jsonl(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def parse(cls, text: str) -> "RunLog":
        header, events, records, outcome, settlement, extras = {}, [], [], None, {}, {}
        for line in text.splitlines():
            obj = json.loads(line)
            kind = obj.pop("type")
            if kind == "header":
                header = obj
            elif kind == "event":
                events.append(obj)
            elif kind == "record":
                records.append((obj["t"], obj["pid"], obj["what"], obj["value"]))
            elif kind == "outcome":
                outcome = TerminalOutcome.from_json(obj)
            elif kind == "settlement":
                settlement = obj
            elif kind == "extras":
                extras = obj
        if outcome is None:
            raise ValueError("run log has no outcome line")
        return cls(header, events, records, outcome, settlement, extras)


@dataclass
class RunResult:
    log: RunLog
    scenario: ScenarioConfig
    players: dict
    agent: Any
    wc: Optional[WcResult]
    expectations_met: bool

    @property
    def outcome(self) -> TerminalOutcome:
        return self.log.outcome


def _policy(sc: ScenarioConfig, agent) -> SchedulerPolicy:
    if sc.scheduler == "synchronous":
        return Synchronous(sc.gst, sc.delta)
    if sc.scheduler == "random":
        return SchedulerPolicy(sc.gst, sc.delta)
    if sc.scheduler == "scripted":
        return AdversarialScripted(sc.gst, sc.delta, list(sc.script))
    return AdversarialStrategic(sc.gst, sc.delta, hook=agent)


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, bytes):
        return v.hex()
    return v


def run(scenario: ScenarioConfig, seed: Optional[int] = None, log_events: bool = True) -> RunResult:
    sc = scenario
    seed = sc.seed if seed is None else seed
    f, n = sc.f, sc.n
    params = sc.params()
    coalition = sc.coalition()
    members = set(coalition.members)
    honest = [p for p in range(n) if p not in members]
    mode = sc.resolved_finalization()
    registry = KeyRegistry(n, seed)
    cfg = ConsensusConfig.main(f, sc.view_ticks, share_certs=(mode == "bftcr"))
    if sc.inputs == "same":
        values = {p: b"v" for p in range(n)}
    else:
        values = {p: b"v%d" % p for p in range(n)}
    ctx = RunContext(f, registry, cfg, sc.delta, sc.gst, mode, sc.conflict_path, honest,
                     coalition, seed, values, dict(sc.options))
    agent = LIBRARY[sc.strategy](ctx)
    policy = _policy(sc, agent)
    engine = Engine(n, policy, seed, correct=honest, max_ticks=sc.ticks, log_events=log_events)
    players: dict[int, Player] = {}
    for pid in honest:
        def send(kind, payload, pid=pid):
            engine.broadcast(pid, kind, payload)
        players[pid] = Player(pid, registry, cfg, values[pid], send, f=f, delta=sc.delta,
                              finalization=mode, conflict_path=sc.conflict_path)
    actors: dict = dict(players)
    for pid in members:
        actors[pid] = agent
    agent.start(engine)
    for pid in honest:
        players[pid].start(engine)

    def done():
        return all(p.decision is not None for p in players.values())

    def live():
        return [p for p in honest if players[p].decision is None]

    finished = engine.run(actors, done, live)
    timeout = not finished

    decided = {p: pl.decision for p, pl in players.items() if pl.decision is not None}
    vals = set(decided.values())
    a = len(vals)
    cons = 1 if decided and a == 1 and len(decided) == len(honest) else 0
    seen = set()
    for pl in players.values():
        seen |= pl.seen
    E = culprits(detect_equivocation(seen))
    k_loot = frozenset(agent.loot_sharers()) if a >= 2 else frozenset()

    wc: Optional[WcResult] = None
    winner = None
    wc_violation = False
    cand_sets: dict[int, tuple] = {}
    rejected: set[int] = set()
    if mode == "bftcr" and len(E) >= 3 * f + 1:
        for p, pl in players.items():
            if isinstance(pl.fin, Bftcr):
                cand_sets[p] = tuple(sorted(pl.fin.candidacies(E, f)))
                rejected.update(pl.fin.rejected_claims(E, f))
        if sc.winner_consensus and decided:
            residual = [p for p in range(n) if p not in E]
            wc_coal = members - set(agent.baiters())
            ref_value = min(vals) if vals else b""
            cands = {p: s for p, s in cand_sets.items() if p not in E and s}
            wc = winner_consensus(cands, residual, wc_coal, n=n, seed=seed, decided_value=ref_value,
                                  gst=sc.gst, delta=sc.delta, adversary=sc.wc_adversary,
                                  view_ticks=sc.view_ticks, registry=registry)
            winner = wc.winner
            wc_violation = isinstance(wc.outcome, SafetyViolation)
    outcome = TerminalOutcome(cons, a, k_loot, winner, E, decided, timeout, wc_violation)
    ledger, report = settle(outcome, params)

    header = {
        "version": SCHEMA_VERSION,
        "seed": seed,
        "scenario": sc.to_dict(),
        "policy": policy.to_json(),
    }
    events = [e.to_json() for e in engine.events]
    records = [(t, pid, what, _jsonable(v)) for t, pid, what, v in engine.records]
    settlement = {"params": {"f": f, "deposit": str(params.deposit), "gain": str(params.gain)},
                  "ledger": ledger.to_json(), "utilities": report.to_json()}
    extras = {
        "predecisions": {str(p): pl.predecision[0].hex() for p, pl in sorted(players.items())
                         if pl.predecision is not None},
        "coalition_predecisions": {str(p): v.hex() for p, v in sorted(agent.predecisions().items())},
        "candidates": {str(p): list(s) for p, s in sorted(cand_sets.items())},
        "baiters": sorted(agent.baiters()),
        "rejected_claims": sorted(rejected),
        "rejections": len(engine.rejections),
        "wc": None if wc is None else {"n_residual": wc.n_residual, "c_residual": wc.c_residual,
                                       "attacked": wc.attacked,
                                       "outcome": repr(wc.outcome)},
        "ticks": engine.now,
    }
    log = RunLog(header, events, records, outcome, settlement, extras)
    return RunResult(log, sc, players, agent, wc, expectations_met(sc, outcome))


def expectations_met(sc: ScenarioConfig, out: TerminalOutcome) -> bool:
    ok = True
    for tag in sc.expect:
        if tag == "expect-fork":
            ok &= out.a >= 2
        elif tag == "expect-nofork":
            ok &= out.a <= 1 and out.cons == 1 and not out.liveness_timeout
        elif tag == "expect-safety-violation":
            ok &= out.a >= 2 or out.wc_violation
        elif tag == "expect-nontermination":
            ok &= out.liveness_timeout
    if "expect-nontermination" not in sc.expect and out.liveness_timeout:
        ok = False
    return ok


# ------------------------------------------------------------------- replay

@dataclass
class ReplayVerdict:
    ok: bool
    message: str
    first_divergence: Optional[int] = None


def outcome_from_records(log: RunLog) -> tuple[dict, int, int]:
    """Correct players' decisions, ``a`` and ``cons`` rebuilt from the
    decision records alone."""
    sc = ScenarioConfig.from_dict(log.header["scenario"])
    members = set(sc.coalition_ids)
    decided: dict[int, bytes] = {}
    for _t, pid, what, value in log.records:
        if what == "decide" and pid not in members and pid not in decided:
            decided[pid] = bytes.fromhex(value[0])
    a = len(set(decided.values()))
    cons = 1 if decided and a == 1 and len(decided) == sc.n - sc.C else 0
    return decided, a, cons


def recompute_settlement(log: RunLog) -> dict:
    """Settle the logged outcome from scratch, after checking it against
    the decision records."""
    sc = ScenarioConfig.from_dict(log.header["scenario"])
    decided, a, cons = outcome_from_records(log)
    o = log.outcome
    if dict(o.decided) != decided or o.a != a or o.cons != cons:
        return {"error": "outcome does not match decision records"}
    ledger, report = settle(log.outcome, sc.params())
    p = sc.params()
    return {"params": {"f": sc.f, "deposit": str(p.deposit), "gain": str(p.gain)},
            "ledger": ledger.to_json(), "utilities": report.to_json()}


def replay(text: str) -> ReplayVerdict:
    log = RunLog.parse(text)
    fresh = recompute_settlement(log)
    if fresh != log.settlement:
        return ReplayVerdict(False, "settlement mismatch: logged utilities differ from recomputation")
    sc = ScenarioConfig.from_dict(log.header["scenario"])
    again = run(sc, log.header["seed"]).log.lines()
    old = text.splitlines()
    for i, (x, y) in enumerate(zip(old, again)):
        if x != y:
            return ReplayVerdict(False, f"divergence at line {i + 1}: {x[:120]}", i + 1)
    if len(old) != len(again):
        return ReplayVerdict(False, "length mismatch", min(len(old), len(again)) + 1)
    return ReplayVerdict(True, "OK")


def run_checked(sc: ScenarioConfig, seed: Optional[int] = None) -> RunResult:
    """Like :func:`run` but raises :class:`AttackInfeasible` for strategies
    that cannot realize their construction at this coalition size."""
    thr = fork_threshold(sc.strategy, sc.f, sc.options)
    if thr is not None and sc.C < thr and "expect-fork" in sc.expect:
        raise AttackInfeasible(f"{sc.strategy} needs C >= {thr}")
    return run(sc, seed)
