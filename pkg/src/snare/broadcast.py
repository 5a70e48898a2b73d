"""Bracha reliable broadcast, one state machine per (observer, instance).

Thresholds are expressed in (n, t_rb): ready after ceil((n+t_rb+1)/2)
echoes or t_rb+1 readies, deliver after 2*t_rb+1 readies. Only the
sender's initial message is signed (it can feed a fraud proof); echo and
ready travel over authenticated point-to-point channels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Optional

from .core import Kind, SignedStatement, Signer


class RbPhase(str, enum.Enum):
    INIT = "Init"
    ECHOED = "Echoed"
    READIED = "Readied"
    DELIVERED = "Delivered"


class DuplicateStart(RuntimeError):
    pass


@dataclass(frozen=True)
class RbThresholds:
    n: int
    t: int

    @property
    def echo_to_ready(self) -> int:
        return -(-(self.n + self.t + 1) // 2)

    @property
    def ready_amplify(self) -> int:
        return self.t + 1

    @property
    def deliver(self) -> int:
        return 2 * self.t + 1


@dataclass
class RbInstance:
    sender: int
    tag: int  # 1 for RB1 (commitments), 2 for RB2 (delivery lists)
    phase: RbPhase = RbPhase.INIT
    echoes: dict = field(default_factory=dict)  # key -> set of authors
    readies: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)  # key -> payload
    initial: Optional[SignedStatement] = None
    delivered: Any = None
    sent_echo: bool = False
    sent_ready: bool = False


def rb_broadcast(signer: Signer, tag: int, key: bytes, value: Any,
                 started: Optional[set] = None) -> tuple:
    """Initial message of a new instance: ("send", instance-id, key, value,
    signed statement). ``started`` guards against a second Start."""
    iid = (signer.author, tag)
    if started is not None:
        if iid in started:
            raise DuplicateStart(f"instance {iid} already started")
        started.add(iid)
    stmt = signer.sign(Kind.RB1, tag, key)
    return ("send", iid, key, value, stmt)


def rb_on_message(state: RbInstance, th: RbThresholds, src: int, phase: str,
                  key: bytes, value: Any) -> tuple[list, Any]:
    """Apply one message. Returns (outgoing [(phase, key, value)], delivered
    payload or None). Replays from the same author are idempotent."""
    out = []
    state.values.setdefault(key, value)
    if phase == "send":
        if src == state.sender and not state.sent_echo:
            state.sent_echo = True
            state.phase = RbPhase.ECHOED
            out.append(("echo", key, value))
    elif phase == "echo":
        voters = state.echoes.setdefault(key, set())
        voters.add(src)
        if len(voters) >= th.echo_to_ready and not state.sent_ready:
            state.sent_ready = True
            state.phase = RbPhase.READIED
            out.append(("ready", key, state.values[key]))
    elif phase == "ready":
        voters = state.readies.setdefault(key, set())
        voters.add(src)
        if len(voters) >= th.ready_amplify and not state.sent_ready:
            state.sent_ready = True
            state.phase = RbPhase.READIED
            out.append(("ready", key, state.values[key]))
        if len(voters) >= th.deliver and state.delivered is None:
            state.phase = RbPhase.DELIVERED
            state.delivered = (key, state.values[key])
            return out, state.delivered
    return out, None


class RbHub:
    """All RB instances seen by one observer."""

    def __init__(self, n: int, t: int):
        self.th = RbThresholds(n, t)
        self.instances: dict[tuple, RbInstance] = {}

    def get(self, iid: tuple) -> RbInstance:
        inst = self.instances.get(iid)
        if inst is None:
            inst = self.instances[iid] = RbInstance(iid[0], iid[1])
        return inst

    def handle(self, src: int, phase: str, iid: tuple, key: bytes, value: Any,
               stmt: Optional[SignedStatement] = None) -> tuple[list, Any]:
        inst = self.get(iid)
        if phase == "send" and stmt is not None and inst.initial is None:
            inst.initial = stmt
        return rb_on_message(inst, self.th, src, phase, key, value)
