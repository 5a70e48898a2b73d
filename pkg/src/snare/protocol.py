"""A protocol participant: consensus, then finalization, over RB.

The same class drives correct players and coalition personas; the only
difference is the ``send`` function (who hears the player) and a few
switches the coalition strategies flip.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional

from .broadcast import RbHub
from .consensus import ConsensusConfig, ConsensusMachine
from .core import Certificate, Kind, KeyRegistry, SignedStatement, detect_equivocation
from .finalization import Bftcr, SimpleFinalizer

RB_KINDS = {"rb_send": "send", "rb_echo": "echo", "rb_ready": "ready"}
CONSENSUS_KINDS = {"proposal", "vote", "newview", "cert"}


class Player:
    """``finalization`` is one of "simple", "bftcr", "off" (decide the
    predecision directly)."""

    def __init__(self, pid: int, registry: KeyRegistry, cfg: ConsensusConfig, value: bytes,
                 send: Callable[[str, object], None], *, f: int, delta: int,
                 finalization: str = "simple", conflict_path: bool = True,
                 validity: Optional[Callable[[bytes], bool]] = None,
                 consensus_cls: type = ConsensusMachine):
        self.pid = pid
        self.registry = registry
        self.signer = registry.signer(pid)
        self.f = f
        self.delta = delta
        self.quorum = cfg.quorum
        self.n = cfg.size
        self.send = send
        self.seen: set[SignedStatement] = set()
        self.certs_seen: dict[bytes, Certificate] = {}
        self.decision: Optional[bytes] = None
        self.decided_how = ""
        self.decided_at: Optional[int] = None
        self.log: list[tuple] = []
        self.mode = finalization
        self.finalize_enabled = True  # personas of defectors switch this off
        self.withhold = False
        self.on_predecision_hook: Optional[Callable] = None
        kw = {} if validity is None else {"validity": validity}
        self.cons = consensus_cls(pid, self.signer, registry, cfg, value, self.out,
                                     self._predecided, self.observe, **kw)
        self.rb = RbHub(cfg.size, f)
        self.fin = None
        if finalization == "simple":
            self.fin = SimpleFinalizer(self, conflict_path)
        elif finalization == "bftcr":
            self.fin = Bftcr(self, conflict_path)

    # -- host interface used by the finalizers
    def out(self, kind: str, payload) -> None:
        self.send(kind, payload)

    def observe(self, stmts: Iterable[SignedStatement]) -> None:
        self.seen.update(stmts)

    def record(self, engine, what: str, value) -> None:
        self.log.append((engine.now, what, value))

    def adopt_cert(self, engine, cert: Certificate) -> None:
        self.cons.adopt(engine, cert)

    def rb_start(self, engine, tag: int, key: bytes, value) -> None:
        stmt = self.signer.sign(Kind.RB1, tag, key)
        self.out("rb_send", ((self.pid, tag), key, value, stmt))

    def on_decide(self, engine, value: bytes, how: str) -> None:
        if self.decision is None:
            self.decision = value
            self.decided_how = how
            self.decided_at = engine.now
            engine.record(self.pid, "decide", (value.hex(), how))

    # -- lifecycle
    @property
    def predecision(self):
        return self.cons.predecision

    def start(self, engine) -> None:
        self.cons.start(engine)

    def own_pofs(self):
        return detect_equivocation(self.seen)

    def _predecided(self, engine, value: bytes, cert: Certificate) -> None:
        engine.record(self.pid, "predecide", value.hex())
        self.certs_seen.setdefault(value, cert)
        if self.on_predecision_hook is not None:
            self.on_predecision_hook(engine, self, value, cert)
        if not self.finalize_enabled:
            return
        self.begin_finalization(engine, value, cert)

    def begin_finalization(self, engine, value: bytes, cert: Certificate,
                           pofs=None, certs: Iterable[Certificate] = ()) -> None:
        if self.fin is None:
            self.on_decide(engine, value, "predecision")
            return
        if self.withhold:
            return
        if isinstance(self.fin, Bftcr):
            if pofs is None:
                pofs = self.own_pofs()
            certs = list(certs) + list(self.certs_seen.values())
            self.fin.start(engine, value, cert, pofs, certs)
        else:
            self.fin.start(engine, value, cert)

    # -- engine callbacks
    def on_activate(self, engine, pid: int) -> None:
        self.cons.tick(engine)
        if self.fin is not None:
            self.fin.on_timer(engine)

    def on_message(self, engine, msg) -> None:
        kind, src, payload = msg.kind, msg.src, msg.payload
        if kind in CONSENSUS_KINDS:
            if kind == "cert" and isinstance(payload, Certificate):
                if payload.is_valid(self.registry, self.quorum):
                    self.certs_seen.setdefault(payload.value, payload)
            self.cons.on_message(engine, src, kind, payload)
            if (kind == "cert" and self.fin is not None and self.fin.mine is not None
                    and isinstance(payload, Certificate) and payload.value != self.fin.mine[0]):
                self.fin.on_conflict_msg(engine, (payload,))
        elif kind in RB_KINDS:
            self._on_rb(engine, src, RB_KINDS[kind], payload)
        elif self.fin is not None:
            self.fin.on_message(engine, src, kind, payload)

    def _on_rb(self, engine, src: int, phase: str, payload) -> None:
        iid, key, value, stmt = payload
        if stmt is None or not (stmt.kind is Kind.RB1 and stmt.author == iid[0]
                                and stmt.view == iid[1] and stmt.body == key
                                and self.registry.verify(stmt)):
            return
        if phase == "send" and src != iid[0]:
            return
        self.observe((stmt,))
        outs, delivered = self.rb.handle(src, phase, iid, key, value, stmt)
        for ph, k, v in outs:
            self.out("rb_" + ph, (iid, k, v, stmt))
        if delivered is not None and isinstance(self.fin, Bftcr):
            inst = self.rb.get(iid)
            self.fin.on_rb_deliver(engine, iid, delivered[0], delivered[1], inst.initial)
