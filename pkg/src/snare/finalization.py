"""Finalization: Simple Finalization (no-fork regime) and BFTCR (fork
regime), both as message-driven state machines.

Conflict handling. A player that sees a conflicting certified value stops
accepting the quorum path, broadcasts the conflicting certificates, and
waits ``W`` ticks past ``max(now, gst)``. A player that had already decided
by quorum answers with its finality proof, which the waiting players
adopt. If no proof arrives they decide :func:`resolve` over every
certified value they hold. Since a quorum decider must have decided before
the conflict notice reached it, its proof arrives within ``2*delta`` after
GST, which ``W`` covers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .core import (
    Certificate,
    DomainError,
    Kind,
    KeyRegistry,
    ProofOfBaiting,
    ProofOfFraud,
    SignedStatement,
    canonical,
    culprits,
    detect_equivocation,
    digest,
    value_digest,
)


# ----------------------------------------------------------- resolve rule

def resolve_values(values: Iterable[bytes]) -> bytes:
    vals = set(values)
    if len(vals) < 2:
        raise DomainError("resolve needs at least two conflicting values")
    return min(vals, key=value_digest)


def resolve(*certs: Certificate) -> bytes:
    """Smallest value digest among conflicting certified values."""
    return resolve_values(c.value for c in certs)


# ------------------------------------------------------------ commitments

@dataclass(frozen=True)
class PofBundle:
    pofs: tuple[ProofOfFraud, ...]
    certs: tuple[Certificate, ...]

    def encode(self) -> bytes:
        return canonical({"pofs": [p.to_json() for p in self.pofs],
                          "certs": [c.to_json() for c in self.certs]})

    def verify(self, registry: KeyRegistry, quorum: int) -> bool:
        if not self.pofs or not all(p.verify(registry) for p in self.pofs):
            return False
        return all(c.is_valid(registry, quorum) for c in self.certs)


def _encode_plain(plain: tuple) -> bytes:
    tag, body = plain
    return b"H" + body if tag == "hash" else b"P" + body.encode()


@dataclass(frozen=True)
class Commitment:
    """Sealed payload. Players learn the plaintext only through
    :meth:`open` with the matching key; ``plaintext`` is for the test
    oracle. :meth:`serialize` has the same length for every payload."""

    author: int
    sealed: bytes
    plaintext: Any = field(compare=False, repr=False)

    def open(self, key: bytes) -> Optional[tuple]:
        if digest(key + _encode_plain(self.plaintext)) != self.sealed:
            return None
        return self.plaintext

    def serialize(self) -> bytes:
        return self.author.to_bytes(4, "big") + self.sealed


def seal(author: int, key: bytes, plaintext: tuple) -> Commitment:
    return Commitment(author, digest(key + _encode_plain(plaintext)), plaintext)


# -------------------------------------------------------- finality proofs

@dataclass(frozen=True)
class FinalProof:
    """Evidence that ``h`` players vouched for ``value``: signed HashCert
    statements (simple) or opened RB1 commitments (BFTCR)."""

    value: bytes
    cert: Certificate
    hashcerts: tuple[SignedStatement, ...] = ()
    openings: tuple[tuple[SignedStatement, Commitment, SignedStatement], ...] = ()

    def verify(self, registry: KeyRegistry, quorum: int) -> bool:
        d = value_digest(self.value)
        if self.cert.value != self.value or not self.cert.is_valid(registry, quorum):
            return False
        if self.hashcerts:
            authors = {s.author for s in self.hashcerts}
            return (len(authors) >= quorum and
                    all(s.kind is Kind.HASH_CERT and s.body == d and registry.verify(s)
                        for s in self.hashcerts))
        authors = set()
        for rb1, com, key in self.openings:
            if not (rb1.kind is Kind.RB1 and key.kind is Kind.KEY_REVEAL
                    and rb1.author == key.author == com.author and rb1.body == com.sealed
                    and registry.verify(rb1) and registry.verify(key)):
                return False
            if com.open(key.body) != ("hash", d):
                return False
            authors.add(rb1.author)
        return len(authors) >= quorum


# -------------------------------------------------------------- candidacy

def validate_pob(pob: ProofOfBaiting, E: Iterable[int], rb2_lists: dict[int, Iterable[tuple]],
                 registry: KeyRegistry, f: int) -> bool:
    """Valid iff the candidate revealed verifiable fraud proofs and at
    least f+1 players outside ``E`` listed its RB1 commitment."""
    E = frozenset(E)
    if not pob.pofs or not all(p.verify(registry) for p in pob.pofs):
        return False
    if any(s in E for s in pob.supporters):
        return False
    entry = (pob.candidate, pob.commitment_digest)
    backers = {a for a, lst in rb2_lists.items() if a not in E and entry in set(lst)}
    if not set(pob.supporters) <= backers:
        return False
    return len(backers) >= f + 1


# ---------------------------------------------------------- state machines

class _ConflictMixin:
    """Shared conflict / finality-proof / fallback-resolve path."""

    window = 3

    def _init_conflict(self, conflict_path: bool) -> None:
        self.conflict_path = conflict_path
        self.conflict = False
        self.deadline: Optional[int] = None
        self.certs: dict[bytes, Certificate] = {}
        self.final_proof: Optional[FinalProof] = None
        self.sent_final = False
        self.late_evidence: list = []
        self._observed: dict[int, Certificate] = {}

    def _add_cert(self, cert: Certificate) -> None:
        self.certs.setdefault(cert.value, cert)
        # certificates are shared objects; observe each one only once
        if id(cert) not in self._observed:
            self._observed[id(cert)] = cert
            self.host.observe(cert.all_statements())

    def enter_conflict(self, engine) -> None:
        if self.conflict or not self.conflict_path:
            return
        self.conflict = True
        self.deadline = max(engine.now, engine.gst) + self.window
        engine.set_timer(self.host.pid, self.deadline)
        self.host.out("conflict", tuple(self.certs[v] for v in sorted(self.certs)))
        self.host.record(engine, "conflict", sorted(v.hex() for v in self.certs))

    def on_conflict_msg(self, engine, certs) -> None:
        for c in certs:
            if isinstance(c, Certificate) and c.is_valid(self.host.registry, self.host.quorum):
                self._add_cert(c)
        if self.decided is not None:
            if any(isinstance(c, Certificate) and c.value != self.decided for c in certs):
                self.late_evidence.append(tuple(certs))
                self._send_final()
            return
        if len(self.certs) >= 2:
            self.enter_conflict(engine)

    def _send_final(self) -> None:
        if self.final_proof is not None and not self.sent_final:
            self.sent_final = True
            self.host.out("final", self.final_proof)

    def on_final(self, engine, proof: FinalProof) -> None:
        if self.decided is not None or not isinstance(proof, FinalProof):
            return
        if not proof.verify(self.host.registry, self.host.quorum):
            return
        self._add_cert(proof.cert)
        self.final_proof = proof
        self._decide(engine, proof.value, "adopted")
        self._send_final()

    def on_timer(self, engine) -> None:
        if self.conflict and self.decided is None and engine.now >= self.deadline:
            values = set(self.certs)
            if len(values) >= 2:
                self._decide(engine, resolve_values(values), "resolved")

    def _decide(self, engine, value: bytes, how: str) -> None:
        self.decided = value
        self.how = how
        self.host.on_decide(engine, value, how)


class SimpleFinalizer(_ConflictMixin):
    """Broadcast (H(v), cert); decide on h matching digests."""

    def __init__(self, host, conflict_path: bool = True):
        self.host = host
        self.window = 2 * host.delta + 1
        self.mine: Optional[tuple[bytes, Certificate]] = None
        self.hashes: dict[int, SignedStatement] = {}
        self.decided: Optional[bytes] = None
        self.how = ""
        self.invalid_senders: set[int] = set()
        self._init_conflict(conflict_path)

    def start(self, engine, value: bytes, cert: Certificate) -> None:
        self.mine = (value, cert)
        self._add_cert(cert)
        stmt = self.host.signer.sign(Kind.HASH_CERT, 0, value_digest(value))
        self.host.out("hashcert", (stmt, cert))
        self._evaluate(engine)

    def on_message(self, engine, src: int, kind: str, payload) -> None:
        if kind == "hashcert":
            stmt, cert = payload
            reg = self.host.registry
            if (stmt.author != src or stmt.kind is not Kind.HASH_CERT or not reg.verify(stmt)
                    or not isinstance(cert, Certificate)
                    or value_digest(cert.value) != stmt.body
                    or not cert.is_valid(reg, self.host.quorum)):
                self.invalid_senders.add(src)
                self.host.record(engine, "invalid-hashcert", src)
                return
            self.host.observe((stmt,))
            self._add_cert(cert)
            self.hashes.setdefault(src, stmt)
            if self.mine is None:
                self.host.adopt_cert(engine, cert)
            self._evaluate(engine)
        elif kind == "conflict":
            self.on_conflict_msg(engine, payload)
        elif kind == "final":
            self.on_final(engine, payload)

    def _evaluate(self, engine) -> None:
        if self.mine is None:
            return
        if len(self.certs) >= 2:
            if self.decided is not None:
                return
            self.enter_conflict(engine)
        if self.decided is not None or self.conflict:
            return
        d = value_digest(self.mine[0])
        matching = [s for s in self.hashes.values() if s.body == d]
        if len(matching) >= self.host.quorum:
            self.final_proof = FinalProof(self.mine[0], self.mine[1],
                                          tuple(sorted(matching, key=lambda s: s.author)))
            self._decide(engine, self.mine[0], "quorum")


class Bftcr(_ConflictMixin):
    """Commit (hash or fraud proofs) via RB1, list deliveries via RB2,
    reveal keys once both reach h, then decode."""

    def __init__(self, host, conflict_path: bool = True):
        self.host = host
        self.window = 4 * host.delta + 1
        self.rb2_grace = 2 * host.delta
        self.mine: Optional[tuple[bytes, Certificate]] = None
        self.key: Optional[bytes] = None
        self.commitment: Optional[Commitment] = None
        self.rb1: dict[int, tuple[SignedStatement, Commitment]] = {}
        self.rb2: dict[int, tuple] = {}
        self.keys: dict[int, SignedStatement] = {}
        self.decoded: dict[int, tuple] = {}
        self.bundles: dict[int, PofBundle] = {}
        self.flagged: set[int] = set()
        self.sent_rb2 = False
        self.rb2_at: Optional[int] = None
        self.revealed = False
        self.decided: Optional[bytes] = None
        self.how = ""
        self.pofs_seen: dict[int, ProofOfFraud] = {}
        self.claims: dict[int, tuple[Commitment, PofBundle]] = {}
        self.extra_rb2: list = []  # coalition personas splice forged entries here
        self.suppress_reveal = False
        self._init_conflict(conflict_path)

    # -- commit
    def start(self, engine, value: bytes, cert: Certificate,
              pofs: Optional[list] = None, certs: Iterable[Certificate] = ()) -> None:
        self.mine = (value, cert)
        self._add_cert(cert)
        for c in certs:
            self._add_cert(c)
        if pofs:
            plain = ("pofs", PofBundle(tuple(pofs), tuple(self.certs[v] for v in sorted(self.certs))))
        else:
            plain = ("hash", value_digest(value))
        self.key = self.host.registry.secret_material(self.host.pid, "bftcr-key")
        self.commitment = seal(self.host.pid, self.key, plain)
        self.host.rb_start(engine, 1, self.commitment.sealed, self.commitment)
        self._progress(engine)

    # -- RB callbacks
    def on_rb_deliver(self, engine, iid: tuple, key: bytes, value, stmt) -> None:
        sender, tag = iid
        if tag == 1:
            if isinstance(value, Commitment) and value.author == sender and value.sealed == key:
                self.rb1.setdefault(sender, (stmt, value))
        elif tag == 2:
            self.rb2.setdefault(sender, tuple(value))
        self._try_decode(engine, sender)
        self._progress(engine)

    def _progress(self, engine) -> None:
        if self.mine is None:
            return
        q = self.host.quorum
        if not self.sent_rb2 and len(self.rb1) >= q and self.rb2_at is None:
            # short grace so commitments sent alongside the h-th one still make the list
            self.rb2_at = engine.now + self.rb2_grace
            engine.set_timer(self.host.pid, self.rb2_at)
        if not self.sent_rb2 and self.rb2_at is not None and (
                engine.now >= self.rb2_at or len(self.rb1) == self.host.n):
            self.sent_rb2 = True
            lst = tuple(sorted({(j, self.rb1[j][1].sealed) for j in self.rb1} | set(self.extra_rb2)))
            self.host.rb_start(engine, 2, digest(canonical([[j, s.hex()] for j, s in lst])), lst)
        if (not self.revealed and not self.suppress_reveal and self.sent_rb2
                and len(self.rb1) >= q and len(self.rb2) >= q):
            self.revealed = True
            self.host.out("reveal", self.host.signer.sign(Kind.KEY_REVEAL, 0, self.key))

    def on_timer(self, engine) -> None:
        super().on_timer(engine)
        self._progress(engine)

    # -- reveal / decode
    def on_message(self, engine, src: int, kind: str, payload) -> None:
        if kind == "reveal":
            stmt = payload
            if stmt.author != src or stmt.kind is not Kind.KEY_REVEAL or not self.host.registry.verify(stmt):
                return
            self.host.observe((stmt,))
            self.keys.setdefault(src, stmt)
            self._try_decode(engine, src)
        elif kind == "claim":
            com, key = payload
            reg = self.host.registry
            if (key.author != src or key.kind is not Kind.KEY_REVEAL or not reg.verify(key)
                    or not isinstance(com, Commitment) or com.author != src):
                return
            plain = com.open(key.body)
            if plain is None or plain[0] != "pofs" or not plain[1].verify(reg, self.host.quorum):
                self.host.record(engine, "invalid-claim", src)
                return
            self.claims.setdefault(src, (com, plain[1]))
        elif kind == "conflict":
            self.on_conflict_msg(engine, payload)
        elif kind == "final":
            self.on_final(engine, payload)

    def _try_decode(self, engine, j: int) -> None:
        if j in self.decoded or j not in self.rb1 or j not in self.keys:
            return
        stmt, com = self.rb1[j]
        plain = com.open(self.keys[j].body)
        if plain is None:
            self.flagged.add(j)
            self.decoded[j] = ("bad", None)
            self.host.record(engine, "undecryptable", j)
            return
        self.decoded[j] = plain
        if plain[0] == "pofs":
            bundle = plain[1]
            if bundle.verify(self.host.registry, self.host.quorum):
                self.bundles[j] = bundle
                for p in bundle.pofs:
                    self.pofs_seen.setdefault(p.culprit, p)
                    self.host.observe((p.first, p.second))
                for c in bundle.certs:
                    self._add_cert(c)
            else:
                self.host.record(engine, "invalid-pofs", j)
        self._evaluate(engine)

    def _evaluate(self, engine) -> None:
        if self.mine is None:
            return
        if self.bundles or len(self.certs) >= 2:
            if self.decided is not None:
                self.late_evidence.append(tuple(sorted(self.bundles)))
                return
            self.enter_conflict(engine)
        if self.decided is not None or self.conflict:
            return
        d = value_digest(self.mine[0])
        good = [j for j, p in self.decoded.items() if p == ("hash", d)]
        if len(good) >= self.host.quorum:
            openings = tuple((self.rb1[j][0], self.rb1[j][1], self.keys[j]) for j in sorted(good))
            self.final_proof = FinalProof(self.mine[0], self.mine[1], openings=openings)
            self._decide(engine, self.mine[0], "quorum")

    # -- candidacy (read after the run)
    def candidacies(self, E: Iterable[int], f: int) -> dict[int, ProofOfBaiting]:
        """Candidates this player can validate from its own RB2 view."""
        E = frozenset(E)
        offers = [(j, self.rb1[j][1].sealed, b) for j, b in self.bundles.items()]
        offers += [(j, com.sealed, b) for j, (com, b) in self.claims.items()]
        out: dict[int, ProofOfBaiting] = {}
        for j, sealed, bundle in sorted(offers, key=lambda o: (o[0], o[1])):
            if j in out:
                continue
            entry = (j, sealed)
            sup = tuple(sorted(a for a, lst in self.rb2.items() if a not in E and entry in lst))
            pob = ProofOfBaiting(j, bundle.pofs, sealed, sup)
            if validate_pob(pob, E, self.rb2, self.host.registry, f):
                out[j] = pob
        return out

    def rejected_claims(self, E: Iterable[int], f: int) -> list[int]:
        ok = self.candidacies(E, f)
        return sorted(j for j in self.claims if j not in ok)


def detected_set(stmt_sets: Iterable[Iterable[SignedStatement]]) -> frozenset[int]:
    allstmts: set[SignedStatement] = set()
    for s in stmt_sets:
        allstmts.update(s)
    return culprits(detect_equivocation(allstmts))
