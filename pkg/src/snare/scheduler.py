"""Discrete-event engine with a partial-synchrony scheduler.

Time is an integer tick. Before GST the scheduler (possibly adversarial)
may delay messages arbitrarily, but any message a correct player sends at
tick ``s`` is delivered no later than ``max(s, gst) + delta``. Requests
that break this bound are rejected, logged, and clamped.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Protocol


@dataclass(slots=True)
class Message:
    mid: int
    src: int
    dst: int
    kind: str
    payload: Any
    sent: int


@dataclass(frozen=True, slots=True)
class ScheduleEvent:
    time: int
    kind: str  # "deliver" | "activate" | "gst"
    mid: int = -1
    to: int = -1

    def to_json(self) -> dict:
        return {"t": self.time, "ev": self.kind, "mid": self.mid, "to": self.to}


# ---------------------------------------------------------------- policies

class DelayHook(Protocol):
    def delay(self, engine: "Engine", msg: Message) -> Optional[int]:
        """Requested absolute delivery tick, or None for the default."""


@dataclass
class SchedulerPolicy:
    """Base policy: uniform random delivery inside the legal window."""

    gst: int = 0
    delta: int = 1

    def delivery_time(self, engine: "Engine", msg: Message) -> Optional[int]:
        return None

    def to_json(self) -> dict:
        return {"kind": "random", "gst": self.gst, "delta": self.delta}


@dataclass
class Synchronous(SchedulerPolicy):
    def delivery_time(self, engine, msg):
        return msg.sent + self.delta

    def to_json(self):
        return {"kind": "synchronous", "gst": self.gst, "delta": self.delta}


@dataclass
class AdversarialScripted(SchedulerPolicy):
    """First matching rule wins. A rule is a dict with optional ``src``,
    ``dst``, ``kind`` filters and either ``delay`` (relative) or ``at``
    (absolute)."""

    script: list = field(default_factory=list)

    def delivery_time(self, engine, msg):
        for rule in self.script:
            if "src" in rule and rule["src"] != msg.src:
                continue
            if "dst" in rule and rule["dst"] != msg.dst:
                continue
            if "kind" in rule and rule["kind"] != msg.kind:
                continue
            if "at" in rule:
                return int(rule["at"])
            return msg.sent + int(rule.get("delay", 1))
        return None

    def to_json(self):
        return {"kind": "scripted", "gst": self.gst, "delta": self.delta,
                "script": list(self.script)}


@dataclass
class AdversarialStrategic(SchedulerPolicy):
    """Delegates delivery choices to the coalition strategy hook."""

    hook: Optional[DelayHook] = None

    def delivery_time(self, engine, msg):
        return None if self.hook is None else self.hook.delay(engine, msg)

    def to_json(self):
        return {"kind": "strategic", "gst": self.gst, "delta": self.delta}


# ------------------------------------------------------------------ engine

class Actor(Protocol):
    def on_message(self, engine: "Engine", msg: Message) -> None: ...
    def on_activate(self, engine: "Engine", pid: int) -> None: ...


_DELIVER, _TIMER, _GST = 0, 1, 2


class Engine:
    def __init__(self, n: int, policy: SchedulerPolicy, seed: int,
                 correct: Iterable[int] = (), max_ticks: Optional[int] = None,
                 log_events: bool = True):
        self.n = n
        self.policy = policy
        self.gst = policy.gst
        self.delta = policy.delta
        self.seed = seed
        self.rng = random.Random(seed)
        self.correct = frozenset(correct)
        self.max_ticks = 10 * n * n if max_ticks is None else max_ticks
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self._mid = 0
        self.messages: dict[int, Message] = {}
        self.pending_deliveries = 0
        self.events: list[ScheduleEvent] = []
        self.log_events = log_events
        self.rejections: list[dict] = []
        self.records: list[tuple] = []
        self.actors: dict[int, Actor] = {}
        self.live: Callable[[], list[int]] = lambda: []
        self._rr = 0
        self._push(self.gst, _GST, None)

    # -- plumbing
    def _push(self, time: int, kind: int, item) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, item))

    def legal_bound(self, msg: Message) -> Optional[int]:
        if msg.src not in self.correct:
            return None
        return max(msg.sent, self.gst) + self.delta

    def send(self, src: int, dst: int, kind: str, payload: Any) -> int:
        self._mid += 1
        msg = Message(self._mid, src, dst, kind, payload, self.now)
        want = self.policy.delivery_time(self, msg)
        bound = self.legal_bound(msg)
        if want is None:
            hi = bound if bound is not None else max(self.now, self.gst) + self.delta
            want = self.rng.randint(self.now + 1, max(self.now + 1, hi))
        want = max(want, self.now + 1)
        if bound is not None and want > bound:
            self.rejections.append({"mid": msg.mid, "requested": want, "forced": bound})
            want = bound
        self.messages[msg.mid] = msg
        self.pending_deliveries += 1
        self._push(want, _DELIVER, msg)
        return msg.mid

    def broadcast(self, src: int, kind: str, payload: Any,
                  targets: Optional[Iterable[int]] = None) -> None:
        for dst in (range(self.n) if targets is None else targets):
            self.send(src, dst, kind, payload)

    def set_timer(self, pid: int, at: int) -> None:
        self._push(max(at, self.now + 1), _TIMER, pid)

    def record(self, pid: int, what: str, value: Any) -> None:
        self.records.append((self.now, pid, what, value))

    # -- scheduling
    def advance(self) -> Optional[ScheduleEvent]:
        nxt = self._heap[0][0] if self._heap else None
        live = self.live() if self.now >= self.gst and (nxt is None or nxt > self.now) else None
        if live:
            # round-robin fallback activation, one per tick past GST
            self.now += 1
            pid = live[self._rr % len(live)]
            self._rr += 1
            return ScheduleEvent(self.now, "activate", to=pid)
        if not self._heap:
            return None
        time, _, kind, item = heapq.heappop(self._heap)
        self.now = max(self.now, time)
        if kind == _DELIVER:
            self.pending_deliveries -= 1
            return ScheduleEvent(self.now, "deliver", item.mid, item.dst)
        if kind == _TIMER:
            return ScheduleEvent(self.now, "activate", to=item)
        return ScheduleEvent(self.now, "gst")

    def run(self, actors: dict[int, Actor], done: Callable[[], bool],
            live: Callable[[], list[int]]) -> bool:
        """Process events until ``done()`` holds and no message is in
        flight. Returns False when the tick budget ran out first."""
        self.actors = actors
        self.live = live
        while True:
            if self.pending_deliveries == 0 and done():
                return True
            ev = self.advance()
            if ev is None:
                return done()
            if ev.time > self.max_ticks:
                return False
            if self.log_events:
                self.events.append(ev)
            if ev.kind == "deliver":
                msg = self.messages.pop(ev.mid)
                actor = actors.get(msg.dst)
                if actor is not None:
                    actor.on_message(self, msg)
            elif ev.kind == "activate":
                actor = actors.get(ev.to)
                if actor is not None:
                    actor.on_activate(self, ev.to)


def events_to_jsonl(events: Iterable[ScheduleEvent]) -> str:
    return "".join(json.dumps(e.to_json(), separators=(",", ":")) + "\n" for e in events)
