"""Domain vocabulary: players, signed statements, certificates, fraud and
baiting evidence, terminal outcomes.

Signatures are modeled as unforgeable tags: a keyed digest over the
statement fields using a per-player secret nonce held by the
:class:`KeyRegistry`. Nothing here is real cryptography.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional


class DomainError(ValueError):
    """An operation was called outside its mathematical domain."""


class UnknownAuthor(KeyError):
    """A statement names an author that is not in the key registry."""


class InvariantViolation(RuntimeError):
    """A protocol invariant was broken; indicates a bug, not an attack."""


class PlayerType(str, enum.Enum):
    CORRECT = "correct"
    RATIONAL = "rational"
    BYZANTINE = "byzantine"


class Regime(str, enum.Enum):
    NOFORK = "nofork"
    FORK = "fork"


class Kind(str, enum.Enum):
    """Payload kinds carried by signed statements."""

    VOTE = "Vote"
    PROPOSAL = "Proposal"
    HASH_CERT = "HashCert"
    RB1 = "RB1"
    RB2_ECHO = "RB2Echo"
    RB2_READY = "RB2Ready"
    KEY_REVEAL = "KeyReveal"
    WINNER_VOTE = "WinnerVote"


NIL = b""  # body of a timeout (nil) vote


def digest(data: bytes) -> bytes:
    """Collision-free model digest."""
    return hashlib.sha256(data).digest()


def value_digest(value: bytes) -> bytes:
    return digest(b"value:" + value)


def canonical(obj: Any) -> bytes:
    """Stable JSON encoding used for bodies and run logs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class SystemParams:
    """Deployment tuple. ``n`` and ``h`` follow from ``f``."""

    f: int
    gain: Fraction = Fraction(1)
    deposit: Fraction = Fraction(0)
    regime: Regime = Regime.NOFORK

    def __post_init__(self) -> None:
        if self.f < 1:
            raise DomainError("f must be >= 1")
        object.__setattr__(self, "gain", Fraction(self.gain))
        object.__setattr__(self, "deposit", Fraction(self.deposit))
        if self.gain < 0 or self.deposit < 0:
            raise DomainError("gain and deposit must be nonnegative")
        if self.regime is Regime.NOFORK and self.deposit != 0:
            raise DomainError("NoFork deployments hold no deposit")

    @property
    def n(self) -> int:
        return 5 * self.f + 1

    @property
    def h(self) -> int:
        return 4 * self.f + 1

    @property
    def reward(self) -> Fraction:
        return 3 * self.f * self.deposit


@dataclass(frozen=True)
class CoalitionSpec:
    rational: frozenset[int]
    byzantine: frozenset[int]
    strategy: str = "Honest"
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rational", frozenset(self.rational))
        object.__setattr__(self, "byzantine", frozenset(self.byzantine))
        if self.rational & self.byzantine:
            raise DomainError("rational and Byzantine members must be disjoint")

    @property
    def members(self) -> frozenset[int]:
        return self.rational | self.byzantine

    @property
    def k(self) -> int:
        return len(self.rational)

    @property
    def t(self) -> int:
        return len(self.byzantine)

    @property
    def size(self) -> int:
        return self.k + self.t


@dataclass(frozen=True)
class SignedStatement:
    author: int
    kind: Kind
    view: int
    body: bytes
    signature: bytes = field(compare=True)

    def __hash__(self) -> int:
        # tags are unique per statement, and bytes cache their own hash
        return hash(self.signature)

    def key(self) -> tuple[int, Kind, int]:
        return (self.author, self.kind, self.view)

    def to_json(self) -> dict:
        return {
            "author": self.author,
            "kind": self.kind.value,
            "view": self.view,
            "body": self.body.hex(),
            "signature": self.signature.hex(),
        }


class KeyRegistry:
    """Holds every player's secret nonce; signs on behalf of its owner.

    A player only ever receives a :class:`Signer` bound to its own id, so
    it cannot produce tags for anyone else.
    """

    def __init__(self, n: int, seed: int = 0):
        self.n = n
        self._secrets = [digest(canonical(["secret", seed, i])) for i in range(n)]
        self._checked: dict[SignedStatement, bool] = {}

    def _tag(self, author: int, kind: Kind, view: int, body: bytes) -> bytes:
        msg = canonical([author, kind.value, view, body.hex()])
        return digest(self._secrets[author] + msg)

    def signer(self, author: int) -> "Signer":
        if not 0 <= author < self.n:
            raise UnknownAuthor(author)
        return Signer(self, author)

    def verify(self, stmt: SignedStatement) -> bool:
        hit = self._checked.get(stmt)
        if hit is not None:
            return hit
        if not 0 <= stmt.author < self.n:
            raise UnknownAuthor(stmt.author)
        ok = stmt.signature == self._tag(stmt.author, stmt.kind, stmt.view, stmt.body)
        self._checked[stmt] = ok
        return ok

    def secret_material(self, author: int, label: str) -> bytes:
        """Per-player private randomness (commitment keys)."""
        return digest(self._secrets[author] + label.encode())


@dataclass(frozen=True)
class Signer:
    registry: KeyRegistry = field(repr=False)
    author: int

    def sign(self, kind: Kind, view: int, body: bytes) -> SignedStatement:
        sig = self.registry._tag(self.author, kind, view, body)
        return SignedStatement(self.author, kind, view, body, sig)


def verify_signature(stmt: SignedStatement, registry: KeyRegistry) -> bool:
    return registry.verify(stmt)


@dataclass(frozen=True)
class Certificate:
    """``quorum`` matching votes for ``value`` in ``view``.

    ``justification`` carries the view-change reports that made the
    proposal admissible (empty in the first view). Those statements are
    what exposes cross-view equivocation.
    """

    value: bytes
    view: int
    statements: tuple[SignedStatement, ...]
    justification: tuple[SignedStatement, ...] = ()
    kind: Kind = Kind.VOTE

    @property
    def signers(self) -> frozenset[int]:
        return frozenset(s.author for s in self.statements)

    def all_statements(self) -> tuple[SignedStatement, ...]:
        return self.statements + self.justification

    def is_valid(self, registry: KeyRegistry, quorum: int) -> bool:
        memo = self.__dict__.setdefault("_memo", {})
        key = (id(registry), quorum)
        if key not in memo:
            memo[key] = self._check(registry, quorum)
        return memo[key]

    def _check(self, registry: KeyRegistry, quorum: int) -> bool:
        if len(self.signers) < quorum or len(self.statements) != len(self.signers):
            return False
        for s in self.statements:
            if s.kind is not self.kind or s.view != self.view or s.body != self.value:
                return False
            if not registry.verify(s):
                return False
        return all(registry.verify(s) for s in self.justification)

    def to_json(self) -> dict:
        return {
            "value": self.value.hex(),
            "view": self.view,
            "statements": [s.to_json() for s in sorted(self.statements, key=_stmt_order)],
            "justification": [s.to_json() for s in sorted(self.justification, key=_stmt_order)],
        }


def _stmt_order(s: SignedStatement) -> tuple:
    return (s.author, s.kind.value, s.view, s.body, s.signature)


@dataclass(frozen=True)
class ProofOfFraud:
    culprit: int
    first: SignedStatement
    second: SignedStatement

    def verify(self, registry: KeyRegistry) -> bool:
        a, b = self.first, self.second
        return (
            a.author == b.author == self.culprit
            and a.kind == b.kind
            and a.view == b.view
            and a.body != b.body
            and registry.verify(a)
            and registry.verify(b)
        )

    def to_json(self) -> dict:
        return {"culprit": self.culprit, "evidence": [self.first.to_json(), self.second.to_json()]}


def detect_equivocation(stmts: Iterable[SignedStatement]) -> list[ProofOfFraud]:
    """One proof per player holding two conflicting statements with equal
    (kind, view). Callers are expected to pass verified statements."""
    seen: dict[tuple[int, Kind, int], SignedStatement] = {}
    proofs: dict[int, ProofOfFraud] = {}
    for s in sorted(set(stmts), key=_stmt_order):
        prior = seen.setdefault(s.key(), s)
        if prior.body != s.body and s.author not in proofs:
            proofs[s.author] = ProofOfFraud(s.author, prior, s)
    return [proofs[a] for a in sorted(proofs)]


def culprits(pofs: Iterable[ProofOfFraud]) -> frozenset[int]:
    return frozenset(p.culprit for p in pofs)


@dataclass(frozen=True)
class ProofOfBaiting:
    candidate: int
    pofs: tuple[ProofOfFraud, ...]
    commitment_digest: bytes
    supporters: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "candidate": self.candidate,
            "commitment": self.commitment_digest.hex(),
            "pofs": [p.to_json() for p in self.pofs],
            "supporters": sorted(self.supporters),
        }


@dataclass(frozen=True)
class TerminalOutcome:
    cons: int
    a: int
    k_loot: frozenset[int]
    winner: Optional[int]
    slashed: frozenset[int]
    decided: Mapping[int, bytes]
    liveness_timeout: bool = False
    wc_violation: bool = False

    @property
    def kappa(self) -> int:
        return len(self.k_loot)

    def to_json(self) -> dict:
        return {
            "cons": self.cons,
            "a": self.a,
            "k_loot": sorted(self.k_loot),
            "kappa": self.kappa,
            "winner": self.winner,
            "slashed": sorted(self.slashed),
            "decided": {str(p): self.decided[p].hex() for p in sorted(self.decided)},
            "liveness_timeout": self.liveness_timeout,
            "wc_violation": self.wc_violation,
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "TerminalOutcome":
        return cls(
            cons=d["cons"],
            a=d["a"],
            k_loot=frozenset(d["k_loot"]),
            winner=d["winner"],
            slashed=frozenset(d["slashed"]),
            decided={int(p): bytes.fromhex(v) for p, v in d["decided"].items()},
            liveness_timeout=d.get("liveness_timeout", False),
            wc_violation=d.get("wc_violation", False),
        )
