"""Coalition strategy library.

A coalition agent owns every coalition member's id. For each member it
runs one or more *personas*: ordinary :class:`~snare.protocol.Player`
instances that live in one "world" (a subset of correct players that the
scheduler keeps apart from the others until GST). Running a persona per
world is how a member equivocates: each persona is individually honest,
but together they sign conflicting statements.

Agents only ever act on messages delivered to coalition ids, and they
also serve as the scheduler's delay hook, so timing and coalition moves
are chosen together.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .consensus import (AttackInfeasible, ConsensusConfig, ConsensusMachine, latest_reports,
                        locked_value)
from .core import (NIL, CoalitionSpec, DomainError, Kind, KeyRegistry, ProofOfBaiting, detect_equivocation,
                   value_digest)
from .finalization import Bftcr, PofBundle, seal
from .protocol import RB_KINDS, Player
from .regime import branch_threshold, undetected_bound


# ------------------------------------------------------------- planning

@dataclass(frozen=True)
class ForkPlan:
    """Honest worlds and the branches each coalition member signs in."""

    a: int
    worlds: tuple[tuple[int, ...], ...]
    signs: dict  # member -> tuple of branch indices

    @property
    def dual(self) -> tuple[int, ...]:
        return tuple(sorted(p for p, b in self.signs.items() if len(b) > 1))

    @property
    def singles(self) -> tuple[int, ...]:
        return tuple(sorted(p for p, b in self.signs.items() if len(b) == 1))

    def branch_signers(self, b: int) -> set[int]:
        return set(self.worlds[b]) | {p for p, bs in self.signs.items() if b in bs}

    @property
    def detected_count(self) -> int:
        return len(self.dual)


def fork_partition(C: int, f: int, a: int, members: Optional[list[int]] = None,
                   honest: Optional[list[int]] = None, abstain: tuple[int, ...] = ()) -> ForkPlan:
    """Split correct players into ``a`` worlds so that each world plus the
    coalition members signing in it reaches exactly h = 4f+1, with as few
    coalition members as possible signing in more than one branch.

    ``abstain`` members sign in every branch but are not counted towards
    any quorum (baiters, whose commitments carry fraud proofs)."""
    n, h = 5 * f + 1, 4 * f + 1
    if a < 2:
        raise DomainError("a fork needs a >= 2 branches")
    if C < branch_threshold(n, h, a):
        raise AttackInfeasible(f"C={C} is below the {a}-branch threshold")
    members = sorted(range(1, C + 1) if members is None else members)
    honest = sorted(set(range(n)) - set(members) if honest is None else honest)
    if len(members) != C or len(honest) != n - C or not set(abstain) <= set(members):
        raise DomainError("member/honest lists do not match C and n")
    counted = [p for p in members if p not in abstain]
    if not abstain:
        D = C - undetected_bound(n, h, C, a)  # equals C_fin(a) when C >= it
    else:
        D = max(0, -(-(a * h - (n - C) - len(counted)) // (a - 1)))
        if D > len(counted):
            raise AttackInfeasible(f"{len(abstain)} abstaining members leave too few signers")
    dual = counted[:D]
    singles = counted[D:]
    # spread single-branch members, never more than h - D per branch
    per = [0] * a
    for i in range(len(singles)):
        b = min(range(a), key=lambda x: (per[x], x))
        per[b] += 1
    need = [h - D - per[b] for b in range(a)]
    if any(x < 0 for x in need) or sum(need) > len(honest):
        raise AttackInfeasible("no partition reaches a quorum in every branch")
    worlds, pos = [], 0
    for b in range(a):
        worlds.append(honest[pos:pos + need[b]])
        pos += need[b]
    for i, p in enumerate(honest[pos:]):  # leftovers widen the branches
        worlds[i % a].append(p)
    signs = {p: tuple(range(a)) for p in list(dual) + list(abstain)}
    it = iter(singles)
    for b in range(a):
        for _ in range(per[b]):
            signs[next(it)] = (b,)
    return ForkPlan(a, tuple(tuple(sorted(w)) for w in worlds), signs)


def best_effort_plan(C: int, f: int, a: int, members: list[int], honest: list[int]) -> ForkPlan:
    """Below the threshold: every member signs everywhere, correct players
    split evenly. Some branch then falls short of a quorum."""
    try:
        return fork_partition(C, f, a, members, honest)
    except AttackInfeasible:
        worlds = [honest[b::a] for b in range(a)]
        return ForkPlan(a, tuple(tuple(w) for w in worlds), {p: tuple(range(a)) for p in members})


def baiters_assign(coalition: CoalitionSpec, m: int, prefer: Optional[list[int]] = None) -> frozenset[int]:
    """Pick ``m`` rational members as baiters, preferring ``prefer`` order
    (members that sign both branches see both certificates)."""
    if m < 0 or m > coalition.k:
        raise DomainError("need 0 <= m <= k")
    order = [p for p in (prefer or []) if p in coalition.rational]
    order += sorted(p for p in coalition.rational if p not in order)
    return frozenset(order[:m])


def fabricate_candidacy(candidate: int, pofs, phantom: bytes, coalition_lists: dict,
                        E, f: int, late: Optional[dict] = None) -> ProofOfBaiting:
    """Strongest forged PoB for a non-baiter: every residual coalition RB2
    list carries the phantom commitment, plus up to ``f`` late lists from
    other players (``late``) that the forger claims as supporters."""
    E = frozenset(E)
    entry = (candidate, phantom)
    lists = {a: tuple(lst) + (entry,) for a, lst in coalition_lists.items() if a not in E}
    late = dict(list((late or {}).items())[:f])
    sup = sorted(set(lists) | set(late))
    return ProofOfBaiting(candidate, tuple(pofs), phantom, tuple(sup))


# ------------------------------------------------------------ run context

@dataclass
class RunContext:
    f: int
    registry: KeyRegistry
    cfg: ConsensusConfig
    delta: int
    gst: int
    mode: str  # "simple" | "bftcr" | "off"
    conflict_path: bool
    honest: list[int]
    coalition: CoalitionSpec
    seed: int
    values: dict  # pid -> input value
    options: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return 5 * self.f + 1


# ----------------------------------------------------------------- agents

class CoalitionAgent:
    """Single-world coalition: members behave exactly like correct players."""

    name = "Honest"
    min_c = 0
    spread = 2
    relay_rb = True

    def __init__(self, ctx: RunContext):
        self.ctx = ctx
        self.members = sorted(ctx.coalition.members)
        self.rng = random.Random(f"{ctx.seed}:{self.name}")
        self.personas: dict[int, dict[int, Player]] = {}
        self.defectors: dict[int, Player] = {}
        self.world_of: dict[int, int] = {p: 0 for p in ctx.honest}
        self.worlds: list[list[int]] = [list(ctx.honest)]
        self.tags: dict[int, int] = {}
        self.engine = None

    # -- construction
    def persona(self, pid: int, branch: int, value: bytes, **kw) -> Player:
        c = self.ctx
        p = Player(pid, c.registry, c.cfg, value, self._sender(pid, branch), f=c.f, delta=c.delta,
                   finalization=c.mode, conflict_path=kw.pop("conflict_path", c.conflict_path), **kw)
        self.personas.setdefault(pid, {})[branch] = p
        return p

    def setup(self, engine) -> None:
        for p in self.members:
            self.persona(p, 0, self.ctx.values[p])

    def start(self, engine) -> None:
        self.engine = engine
        self.setup(engine)
        for pid in self.members:
            for per in list(self.personas.get(pid, {}).values()):
                per.start(engine)

    def _sender(self, pid: int, branch: int) -> Callable:
        def send(kind, payload):
            self.persona_send(pid, branch, kind, payload)
        return send

    def persona_send(self, pid: int, branch: int, kind: str, payload) -> None:
        eng = self.engine
        for dst in self.worlds[branch]:
            eng.send(pid, dst, kind, payload)
        for dst in self.members:
            self.tags[eng.send(pid, dst, kind, payload)] = branch

    def broadcast_all(self, pid: int) -> Callable:
        def send(kind, payload):
            self.engine.broadcast(pid, kind, payload)
        return send

    # -- engine callbacks
    def on_message(self, engine, msg) -> None:
        dst = msg.dst
        if dst in self.defectors:
            self.tags.pop(msg.mid, None)
            self.defectors[dst].on_message(engine, msg)
            return
        mine = self.personas.get(dst)
        if not mine:
            return
        if msg.src in self.ctx.coalition.members:
            b = self.tags.pop(msg.mid, None)
        elif msg.kind in RB_KINDS and self.relay_rb:
            b = None  # every persona keeps serving correct players' broadcasts
        else:
            b = self.world_of.get(msg.src)
        if b is None:
            for per in list(mine.values()):
                per.on_message(engine, msg)
        elif b in mine:
            mine[b].on_message(engine, msg)

    def on_activate(self, engine, pid: int) -> None:
        if pid in self.defectors:
            self.defectors[pid].on_activate(engine, pid)
        for per in list(self.personas.get(pid, {}).values()):
            per.on_activate(engine, pid)

    def delay(self, engine, msg) -> Optional[int]:
        if engine.now < engine.gst and msg.src in self.world_of:
            sb = self.world_of[msg.src]
            db = self.world_of.get(msg.dst)
            if db is not None and db != sb:
                return engine.gst + engine.delta
        return self.jitter(engine)

    def jitter(self, engine) -> int:
        hi = self.spread if engine.now < engine.gst else min(self.spread, engine.delta)
        return engine.now + 1 + int(self.rng.random() * hi)

    # -- reporting
    def players(self) -> list[Player]:
        out = list(self.defectors.values())
        for pid in self.members:
            out.extend(self.personas.get(pid, {}).values())
        return out

    def predecisions(self) -> dict[int, bytes]:
        res = {}
        for pid in self.members:
            cands = [self.defectors[pid]] if pid in self.defectors else []
            cands += [self.personas[pid][b] for b in sorted(self.personas.get(pid, {}))]
            for per in cands:
                if per.predecision is not None:
                    res[pid] = per.predecision[0]
                    break
        return res

    def loot_sharers(self) -> frozenset[int]:
        """Rational members still backing the fork (baiters excluded)."""
        return frozenset(p for p in self.ctx.coalition.rational if p not in self.defectors)

    def baiters(self) -> frozenset[int]:
        return frozenset(self.defectors)


class CrossViewConsensus(ConsensusMachine):
    """Coalition consensus persona for the cross-view split: votes in view
    1 but later reports a nil view-1 vote, and as proposer builds a
    justification that dodges the lock."""

    attack_value = b"B"

    def _end_view(self, engine, v: int) -> None:
        if v == 1:
            self.my_votes[1] = self.signer.sign(self.cfg.vote_kind, self.signed_view(1), NIL)
        super()._end_view(engine, v)

    def justification_for(self, v):
        got = self.reports.get(v, {})
        if len(got) < self.cfg.quorum:
            return None

        def latest(a):
            for s in sorted(got[a], key=lambda s: -s.view):
                if s.body != NIL:
                    return 1
            return 0
        chosen = sorted(got, key=lambda a: (latest(a), a))[: self.cfg.quorum]
        just = tuple(s for a in sorted(chosen) for s in got[a])
        reports = latest_reports(self.cfg, self.registry, v, just)
        if reports is not None and locked_value(self.cfg, reports) is not None \
                and len(got) < self.cfg.size:
            return None  # wait for more nil reports to dilute the lock
        return just

    def choose_value(self, v, reports):
        lock = locked_value(self.cfg, reports)
        return self.attack_value if lock is None else lock


class CrossViewSplit(CoalitionAgent):
    """One correct player (the target) predecides A in view 1; the others
    predecide B in view 2 after the coalition hides its view-1 votes."""

    name = "CrossViewSplit"
    spread = 1

    def __init__(self, ctx):
        super().__init__(ctx)
        f = ctx.f
        if len(self.members) <= f:
            raise AttackInfeasible("cross-view split needs C >= f+1")
        honest = sorted(ctx.honest)
        self.target = honest[0]
        self.slow = set(honest[-f:])
        self.value_a = ctx.options.get("value_a", "A").encode()
        self.value_b = ctx.options.get("value_b", "B").encode()

    def setup(self, engine):
        for p in self.members:
            per = self.persona(p, 0, self.value_a, consensus_cls=CrossViewConsensus)
            per.cons.attack_value = self.value_b
            per.cons.min_predecide_view = 2

    def delay(self, engine, msg):
        cfg = self.ctx.cfg
        if engine.now < engine.gst:
            if msg.src == self.target and msg.dst != self.target:
                return engine.gst + engine.delta
            if msg.dst in self.world_of and msg.dst != self.target:
                stmt = msg.payload[0] if msg.kind == "proposal" else msg.payload
                if msg.kind == "vote" and stmt.view == cfg.view_base + 1:
                    return engine.gst + engine.delta
                if msg.kind == "proposal" and stmt.view == cfg.view_base + 1 and msg.dst in self.slow:
                    return cfg.view_ticks + 1
        return self.jitter(engine)


def cross_view_split(f: int, coalition: CoalitionSpec) -> dict:
    """Delivery script for the cross-view split, as data: which players are
    held back and how."""
    n = 5 * f + 1
    if coalition.size <= f:
        raise AttackInfeasible("cross-view split needs C >= f+1")
    honest = sorted(set(range(n)) - coalition.members)
    return {
        "target": honest[0],
        "slow": honest[-f:],
        "rules": [
            {"src": honest[0], "until": "gst"},
            {"kind": "vote", "view": 1, "to": "honest-except-target", "until": "gst"},
            {"kind": "proposal", "view": 1, "to": "slow", "until": "end-of-view-1"},
        ],
    }


class ForkAgent(CoalitionAgent):
    """Partition fork with ``a`` branches and optional baiters.

    Options: ``a`` (2 or 3), ``m`` (baiters), ``fabricate`` (a non-baiter
    also forges a candidacy).
    """

    name = "Fork2"
    default_a = 2
    default_m = 0
    min_c_offset = 1  # best effort from f+1

    def __init__(self, ctx):
        super().__init__(ctx)
        o = ctx.options
        self.a = int(o.get("a", self.default_a))
        honest = sorted(ctx.honest)
        m = int(o.get("m", self.default_m))
        self.baiter_ids = baiters_assign(ctx.coalition, m, self.members) if m else frozenset()
        C = len(self.members)
        try:
            # room for the baiters on top of full quorums, when there is any
            self.plan = fork_partition(C, ctx.f, self.a, self.members, honest,
                                       abstain=tuple(sorted(self.baiter_ids)))
        except AttackInfeasible:
            self.plan = best_effort_plan(C, ctx.f, self.a, self.members, honest)
        self.worlds = [list(w) for w in self.plan.worlds]
        self.world_of = {p: b for b, w in enumerate(self.worlds) for p in w}
        self.branch_values = [f"branch-{b}".encode() for b in range(self.a)]
        self.phantoms: list = []
        self.fabricator: Optional[int] = None

    def setup(self, engine):
        for p, branches in sorted(self.plan.signs.items()):
            for b in branches:
                per = self.persona(p, b, self.branch_values[b], conflict_path=False)
                if isinstance(per.fin, Bftcr):
                    per.fin.extra_rb2 = self.phantoms
                if p in self.baiter_ids:
                    per.finalize_enabled = False
                    per.on_predecision_hook = self._baiter_progress

    def _baiter_progress(self, engine, persona, value, cert) -> None:
        pid = persona.pid
        mine = self.personas.get(pid, {})
        if pid in self.defectors or any(p.predecision is None for p in mine.values()):
            return
        self.defect(engine, pid)

    def defect(self, engine, pid: int) -> Player:
        """Turn a member into a correct-behaving player holding everything
        its personas observed; it commits the fraud proofs it can build."""
        c = self.ctx
        old = self.personas.pop(pid)
        first = old[min(old)]
        value, cert = first.predecision
        p = Player(pid, c.registry, c.cfg, value, self.broadcast_all(pid), f=c.f, delta=c.delta,
                   finalization=c.mode, conflict_path=True)
        for per in old.values():
            p.seen |= per.seen
            p.certs_seen.update(per.certs_seen)
        p.cons.predecision = (value, cert)
        p.cons.stopped = True
        self.defectors[pid] = p
        engine.record(pid, "defect", value.hex())
        p.begin_finalization(engine, value, cert, pofs=detect_equivocation(p.seen),
                             certs=list(p.certs_seen.values()))
        if c.mode == "simple":
            p.fin.on_conflict_msg(engine, tuple(p.certs_seen.values()))
        return p

    def loot_sharers(self):
        return frozenset(p for p in self.ctx.coalition.rational if p not in self.baiter_ids)


class Fork3(ForkAgent):
    name = "Fork3"
    default_a = 3


class ForkWithBaiters(ForkAgent):
    name = "ForkWithBaiters"
    default_m = 1


class SelfTrigger(ForkAgent):
    """The coalition forks and has one of its own members report the fork
    to collect the reward."""

    name = "SelfTrigger"
    default_m = 1

    def __init__(self, ctx):
        ctx.options.setdefault("m", 1)
        super().__init__(ctx)
        if not self.baiter_ids and self.members:
            # Byzantine-only coalitions still pick a trigger
            self.baiter_ids = frozenset(self.plan.dual[:1] or self.members[:1])


class FabricateCandidacy(ForkAgent):
    """Fork with baiters, plus a non-baiter that forges a candidacy backed
    only by coalition RB2 lists."""

    name = "FabricateCandidacy"
    default_m = 1

    def setup(self, engine):
        super().setup(engine)
        pool = [p for p in self.plan.singles if p not in self.baiter_ids]
        pool += [p for p in self.plan.dual if p not in self.baiter_ids]
        if not pool:
            return
        self.fabricator = pool[0]
        for per in self.personas[self.fabricator].values():
            per.on_predecision_hook = self._forge

    def _forge(self, engine, persona, value, cert) -> None:
        pid = persona.pid
        if any(e[0] == pid for e in self.phantoms):
            return
        seen = set()
        certs = {}
        for per in self.personas.get(pid, {}).values():
            seen |= per.seen
            certs.update(per.certs_seen)
        pofs = detect_equivocation(seen)
        if not pofs:
            # nothing observed yet: borrow proofs from any persona of the coalition
            for pp in self.players():
                seen |= pp.seen
            pofs = detect_equivocation(seen)
        if not pofs:
            return
        reg = self.ctx.registry
        key = reg.secret_material(pid, "bftcr-key")
        phantom = seal(pid, key, ("pofs", PofBundle(tuple(pofs), tuple(certs[v] for v in sorted(certs)))))
        self.phantoms.append((pid, phantom.sealed))
        key_stmt = reg.signer(pid).sign(Kind.KEY_REVEAL, 0, key)
        engine.record(pid, "forge", phantom.sealed.hex())
        self.engine.broadcast(pid, "claim", (phantom, key_stmt), targets=self.ctx.honest)


class WithholdReveal(CoalitionAgent):
    """Members run consensus honestly, then stay silent in finalization
    (no HashCert, or no key reveal under BFTCR)."""

    name = "WithholdReveal"
    min_c = 1

    def setup(self, engine):
        for p in self.members:
            per = self.persona(p, 0, self.ctx.values[p])
            if isinstance(per.fin, Bftcr):
                per.fin.suppress_reveal = True
            else:
                per.withhold = True


class RbEquivocateSender(CoalitionAgent):
    """Members send conflicting initial messages in their own broadcasts
    (RB1 commitments, or HashCerts under simple finalization) and never
    echo or ready for correct senders."""

    name = "RbEquivocateSender"
    min_c = 1

    def persona_send(self, pid, branch, kind, payload):
        eng = self.engine
        honest = sorted(self.ctx.honest)
        half = set(honest[: len(honest) // 2])
        if kind in ("rb_echo", "rb_ready") and payload[0][0] not in self.ctx.coalition.members:
            return
        if kind == "rb_send" and payload[0][1] == 1:
            iid, key, com, stmt = payload
            reg = self.ctx.registry
            alt = seal(pid, reg.secret_material(pid, "bftcr-key"), ("hash", value_digest(b"junk-%d" % pid)))
            alt_stmt = reg.signer(pid).sign(Kind.RB1, 1, alt.sealed)
            for dst in range(self.ctx.n):
                if dst in half:
                    eng.send(pid, dst, kind, (iid, alt.sealed, alt, alt_stmt))
                else:
                    eng.send(pid, dst, kind, payload)
            return
        if kind == "hashcert":
            stmt, cert = payload
            junk = self.ctx.registry.signer(pid).sign(Kind.HASH_CERT, 0, value_digest(b"junk-%d" % pid))
            for dst in range(self.ctx.n):
                eng.send(pid, dst, kind, (junk, cert) if dst in half else payload)
            return
        super().persona_send(pid, branch, kind, payload)


LIBRARY: dict[str, type[CoalitionAgent]] = {
    "Honest": CoalitionAgent,
    "CrossViewSplit": CrossViewSplit,
    "Fork2": ForkAgent,
    "Fork3": Fork3,
    "ForkWithBaiters": ForkWithBaiters,
    "FabricateCandidacy": FabricateCandidacy,
    "SelfTrigger": SelfTrigger,
    "WithholdReveal": WithholdReveal,
    "RbEquivocateSender": RbEquivocateSender,
}


def min_coalition(name: str, f: int) -> int:
    """Smallest coalition each strategy runs with. Fork strategies run best
    effort from f+1 so the no-fork suite can exercise them."""
    if name == "Honest":
        return 0
    if name in ("WithholdReveal", "RbEquivocateSender"):
        return 1
    return f + 1


def fork_threshold(name: str, f: int, options: Optional[dict] = None) -> Optional[int]:
    """Coalition size from which the strategy actually realizes its fork."""
    n, h = 5 * f + 1, 4 * f + 1
    if name in ("Fork2", "ForkWithBaiters", "FabricateCandidacy", "SelfTrigger"):
        return branch_threshold(n, h, int((options or {}).get("a", 2)))
    if name == "Fork3":
        return branch_threshold(n, h, 3)
    return None
