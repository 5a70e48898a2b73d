"""View-synchronized certified-vote consensus with accountable view changes.

Views are clock driven: view ``v`` spans ticks ``[(v-1)T, vT)``. The
proposer of view ``v`` is ``members[v % len(members)]``. A player votes
once per view; if a view ends without its vote it signs a nil vote for
that view instead. At the end of a view every undecided player sends a
view-change report holding its signed votes for *all* earlier views, so a
player that hides a vote has to sign a conflicting nil vote, which is
attributable.

A proposal for ``v > 1`` carries a quorum of such reports. If some value
is the latest non-nil vote of at least ``lock = 2q - n - tol`` reporters,
the proposal must carry that value. Reaching ``q`` matching votes in one
view yields a predecision backed by a :class:`~snare.core.Certificate`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .core import NIL, Certificate, DomainError, Kind, KeyRegistry, SignedStatement, Signer, value_digest


class AttackInfeasible(DomainError):
    """A coalition is too small for the requested construction."""


@dataclass(frozen=True)
class ConsensusConfig:
    members: tuple[int, ...]
    quorum: int
    tolerance: int
    view_ticks: int = 8
    vote_kind: Kind = Kind.VOTE
    view_base: int = 0  # offsets signed view numbers so instances never collide
    share_certs: bool = False

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def lock(self) -> int:
        return max(1, 2 * self.quorum - self.size - self.tolerance)

    def proposer(self, view: int) -> int:
        return self.members[view % self.size]

    @classmethod
    def main(cls, f: int, view_ticks: int = 8, share_certs: bool = False) -> "ConsensusConfig":
        n = 5 * f + 1
        return cls(tuple(range(n)), 4 * f + 1, f, view_ticks, share_certs=share_certs)


@dataclass
class ViewState:
    view: int
    proposal: Optional[bytes] = None
    justification: tuple[SignedStatement, ...] = ()
    voted: Optional[SignedStatement] = None


def latest_reports(cfg: ConsensusConfig, registry: KeyRegistry, view: int,
                   stmts: tuple[SignedStatement, ...]) -> Optional[dict[int, Optional[bytes]]]:
    """Check a justification for ``view`` and return each complete
    reporter's latest non-nil vote (None when it never voted). Returns
    None for a malformed justification."""
    hist: dict[int, dict[int, bytes]] = {}
    lo, hi = cfg.view_base + 1, cfg.view_base + view - 1
    members = set(cfg.members)
    for s in stmts:
        if s.kind is not cfg.vote_kind or not lo <= s.view <= hi or s.author not in members:
            return None
        if not registry.verify(s):
            return None
        prior = hist.setdefault(s.author, {}).setdefault(s.view, s.body)
        if prior != s.body:
            return None
    out = {}
    for author, views in hist.items():
        if len(views) != view - 1:
            continue
        last = None
        for v in sorted(views, reverse=True):
            if views[v] != NIL:
                last = views[v]
                break
        out[author] = last
    return out if len(out) >= cfg.quorum else None


def locked_value(cfg: ConsensusConfig, reports: dict[int, Optional[bytes]]) -> Optional[bytes]:
    counts: dict[bytes, int] = {}
    for val in reports.values():
        if val is not None:
            counts[val] = counts.get(val, 0) + 1
    heavy = [v for v, c in counts.items() if c >= cfg.lock]
    if not heavy:
        return None
    # Cannot tie when n = 5f+1; the digest order keeps it total.
    return min(heavy, key=lambda v: (-counts[v], value_digest(v)))


class ConsensusMachine:
    """One player's consensus state. ``out(kind, payload)`` broadcasts to
    the player's audience; ``on_predecide(value, cert)`` fires once."""

    def __init__(self, pid: int, signer: Signer, registry: KeyRegistry, cfg: ConsensusConfig,
                 value: bytes, out: Callable, on_predecide: Callable,
                 observe: Callable = lambda stmts: None,
                 validity: Callable[[bytes], bool] = lambda v: len(v) > 0):
        self.pid = pid
        self.signer = signer
        self.registry = registry
        self.cfg = cfg
        self.input = value
        self.out = out
        self.on_predecide = on_predecide
        self.observe = observe
        self.validity = validity
        self.view = 0
        self.views: dict[int, ViewState] = {}
        self.votes: dict[int, dict[bytes, dict[int, SignedStatement]]] = {}
        self.reports: dict[int, dict[int, tuple[SignedStatement, ...]]] = {}
        self.pending: dict[int, tuple] = {}
        self.my_votes: dict[int, SignedStatement] = {}
        self.predecision: Optional[tuple[bytes, Certificate]] = None
        self.proposed: set[int] = set()
        self.stopped = False
        self.min_predecide_view = 1

    # -- helpers
    def _vs(self, v: int) -> ViewState:
        st = self.views.get(v)
        if st is None:
            st = self.views[v] = ViewState(v)
        return st

    def signed_view(self, v: int) -> int:
        return self.cfg.view_base + v

    def view_end(self, v: int) -> int:
        return v * self.cfg.view_ticks

    # -- lifecycle
    def start(self, engine) -> None:
        self._enter(engine, 1)

    def _enter(self, engine, v: int) -> None:
        self.view = v
        engine.set_timer(self.pid, self.view_end(v))
        self._maybe_propose(engine)
        if v in self.pending:
            self._handle_proposal(engine, *self.pending.pop(v))

    def tick(self, engine) -> None:
        while not self.stopped and self.view and engine.now >= self.view_end(self.view):
            self._end_view(engine, self.view)

    def _end_view(self, engine, v: int) -> None:
        if v not in self.my_votes:
            self.my_votes[v] = self.signer.sign(self.cfg.vote_kind, self.signed_view(v), NIL)
        report = self.history(v)
        self.out("newview", (v + 1, report))
        self._enter(engine, v + 1)

    def history(self, upto: int) -> tuple[SignedStatement, ...]:
        return tuple(self.my_votes[u] for u in range(1, upto + 1))

    # -- proposing
    def choose_value(self, v: int, reports: dict[int, Optional[bytes]]) -> bytes:
        lock = locked_value(self.cfg, reports)
        return self.input if lock is None else lock

    def justification_for(self, v: int) -> Optional[tuple[SignedStatement, ...]]:
        got = self.reports.get(v, {})
        if len(got) < self.cfg.quorum:
            return None
        return tuple(s for a in sorted(got) for s in got[a])

    def _maybe_propose(self, engine) -> None:
        v = self.view
        if self.stopped or v in self.proposed or self.cfg.proposer(v) != self.pid:
            return
        just: tuple[SignedStatement, ...] = ()
        value = self.input
        if v > 1:
            just = self.justification_for(v)
            if just is None:
                return
            reports = latest_reports(self.cfg, self.registry, v, just)
            if reports is None:
                return
            value = self.choose_value(v, reports)
        self.proposed.add(v)
        stmt = self.signer.sign(Kind.PROPOSAL, self.signed_view(v), value)
        self.out("proposal", (stmt, just))

    # -- message handling
    def on_message(self, engine, src: int, kind: str, payload) -> None:
        if kind == "proposal":
            stmt, just = payload
            v = stmt.view - self.cfg.view_base
            if stmt.kind is not Kind.PROPOSAL or stmt.author != src or self.cfg.proposer(v) != src:
                return
            if not self.registry.verify(stmt):
                return
            self.observe((stmt,) + tuple(just))
            if v > self.view:
                self.pending.setdefault(v, (stmt, just))
            elif v == self.view:
                self._handle_proposal(engine, stmt, just)
        elif kind == "vote":
            self._handle_vote(engine, payload)
        elif kind == "newview":
            v, report = payload
            if not report or any(s.author != src for s in report):
                return
            if not self._report_ok(v, tuple(report)):
                return
            self.observe(tuple(report))
            self.reports.setdefault(v, {})[src] = tuple(report)
            if v == self.view:
                self._maybe_propose(engine)
        elif kind == "cert":
            self.adopt(engine, payload)

    def _report_ok(self, v: int, report: tuple) -> bool:
        views = sorted(s.view - self.cfg.view_base for s in report)
        if views != list(range(1, v)):
            return False
        return all(s.kind is self.cfg.vote_kind and self.registry.verify(s) for s in report)

    def proposal_ok(self, v: int, value: bytes, just: tuple) -> bool:
        if not self.validity(value):
            return False
        if v == 1:
            return not just
        reports = latest_reports(self.cfg, self.registry, v, tuple(just))
        if reports is None:
            return False
        lock = locked_value(self.cfg, reports)
        return lock is None or lock == value

    def _handle_proposal(self, engine, stmt: SignedStatement, just) -> None:
        v = stmt.view - self.cfg.view_base
        st = self._vs(v)
        if st.proposal is not None or self.stopped:
            return
        if not self.proposal_ok(v, stmt.body, tuple(just)):
            return
        st.proposal, st.justification = stmt.body, tuple(just)
        if v in self.my_votes:
            return
        vote = self.signer.sign(self.cfg.vote_kind, self.signed_view(v), stmt.body)
        self.my_votes[v] = vote
        st.voted = vote
        self.out("vote", vote)

    def _handle_vote(self, engine, stmt: SignedStatement) -> None:
        if stmt.kind is not self.cfg.vote_kind or stmt.body == NIL:
            return
        if stmt.author not in self.cfg.members or not self.registry.verify(stmt):
            return
        self.observe((stmt,))
        v = stmt.view - self.cfg.view_base
        bucket = self.votes.setdefault(v, {}).setdefault(stmt.body, {})
        bucket.setdefault(stmt.author, stmt)
        if (self.predecision is None and v >= self.min_predecide_view
                and len(bucket) >= self.cfg.quorum):
            just = self.views[v].justification if v in self.views else ()
            cert = Certificate(stmt.body, stmt.view, tuple(bucket[a] for a in sorted(bucket)),
                               just, self.cfg.vote_kind)
            self._predecide(engine, cert)

    def adopt(self, engine, cert: Certificate) -> bool:
        """Take a predecision from someone else's valid certificate."""
        if not isinstance(cert, Certificate) or cert.kind is not self.cfg.vote_kind:
            return False
        if not cert.is_valid(self.registry, self.cfg.quorum):
            return False
        self.observe(cert.all_statements())
        if self.predecision is None:
            self._predecide(engine, cert)
        return True

    def _predecide(self, engine, cert: Certificate) -> None:
        self.predecision = (cert.value, cert)
        self.stopped = True
        if self.cfg.share_certs:
            self.out("cert", cert)
        self.on_predecide(engine, cert.value, cert)
