"""Hosting market contract: requests, seeder capacity, matching, payloads, trackers.

Owners escrow one Leecher token per 1 MB chunk; seeders escrow tokens for
``R`` blocks of hosting capacity each.  Every chunk is matched to ``R``
distinct seeders, and each seeder receives its own encrypted copy carrying
its public key and a random nonce, so copies cannot be swapped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .crypto import DIGEST_SIZE, Encoder, KeyPair, digest
from .tokens import TokenLedger

DEFAULT_R = 5
NONCE_LEN = 16


class MarketError(Exception):
    pass


class InsufficientLeecherTokens(MarketError):
    pass


class EmptyRequest(MarketError):
    pass


class ZeroCapacity(MarketError):
    pass


class DuplicateChunk(MarketError):
    pass


class MissingCommitments(MarketError):
    pass


class NotOwner(MarketError):
    pass


# -- payloads ------------------------------------------------------------


@dataclass(frozen=True)
class Payload:
    chunk_id: str
    seeder_pubkey: bytes  # cleartext header
    nonce: bytes  # cleartext header, needed to rebuild the keystream
    ciphertext: bytes


def _keystream(secret: bytes, seeder_pub: bytes, nonce: bytes, n: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < n:
        out += digest(secret, seeder_pub, nonce, counter.to_bytes(8, "little"))
        counter += 1
    return bytes(out[:n])


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "little") ^ int.from_bytes(b, "little")).to_bytes(len(a), "little")


def build_payload(owner: KeyPair, chunk_id: str, chunk_data: bytes, seeder_pub: bytes, nonce: bytes) -> Payload:
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    plain = chunk_data + seeder_pub + nonce
    ks = _keystream(owner.secret_key, seeder_pub, nonce, len(plain))
    return Payload(chunk_id, seeder_pub, nonce, _xor(plain, ks))


def decrypt_payload(owner: KeyPair, payload: Payload) -> bytes:
    """Recover the chunk; a wrong key fails the embedded-pubkey check."""
    ks = _keystream(owner.secret_key, payload.seeder_pubkey, payload.nonce, len(payload.ciphertext))
    plain = _xor(payload.ciphertext, ks)
    tail = DIGEST_SIZE + NONCE_LEN
    if len(plain) < tail:
        raise NotOwner("payload too short")
    data, pub, nonce = plain[:-tail], plain[-tail:-NONCE_LEN], plain[-NONCE_LEN:]
    if pub != payload.seeder_pubkey or nonce != payload.nonce:
        raise NotOwner("embedded seeder key does not match header")
    return data


# -- contract state --------------------------------------------------------


@dataclass
class HostingRequest:
    request_id: int
    owner: bytes
    chunk_ids: tuple[str, ...]
    size_mb: int
    tokens_escrowed: int
    submitted_at: int = 0
    closed: bool = False


@dataclass
class SeederCapacity:
    seeder: bytes
    tokens_committed: int
    R: int = DEFAULT_R
    assigned_blocks: int = 0
    forfeited: int = 0
    failed: bool = False

    @property
    def capacity_blocks(self) -> int:
        return self.tokens_committed * self.R

    @property
    def free_blocks(self) -> int:
        return 0 if self.failed else self.capacity_blocks - self.assigned_blocks

    @property
    def escrow(self) -> int:
        return self.tokens_committed - self.forfeited


@dataclass
class HostingAssignment:
    chunk_id: str
    owner: bytes
    seeders: list[bytes]
    payload_commitments: dict[bytes, bytes] = field(default_factory=dict)
    tracker_published: bool = False
    degraded: bool = False
    dropped: list[bytes] = field(default_factory=list)
    request_id: int = 0


@dataclass(frozen=True)
class TrackerRecord:
    chunk_id: str
    owner: bytes
    entries: tuple[tuple[bytes, bytes], ...]  # (seeder, commitment root)

    def encode(self) -> bytes:
        enc = Encoder().u8(1).str(self.chunk_id).bytes(self.owner)
        enc.seq(self.entries, lambda e, p: e.bytes(p[0]).bytes(p[1]))
        return enc.getvalue()


def greedy_pick(free: Mapping[bytes, int], R: int, exclude: Iterable[bytes] = ()) -> list[bytes] | None:
    """``R`` distinct seeders with the most free blocks, ties by key; ``None`` if short."""
    skip = set(exclude)
    ranked = sorted((k for k, v in free.items() if v > 0 and k not in skip), key=lambda k: (-free[k], k))
    return ranked[:R] if len(ranked) >= R else None


def greedy_match(chunks: Sequence, free: dict[bytes, int], R: int) -> dict:
    """Assign chunks in order; mutates ``free``.  Unmatchable chunks are skipped."""
    out = {}
    for chunk in chunks:
        picked = greedy_pick(free, R)
        if picked is None:
            continue
        for s in picked:
            free[s] -= 1
        out[chunk] = picked
    return out


class HostingMarket:
    def __init__(self, R: int = DEFAULT_R):
        if R < 1:
            raise ValueError("R must be >= 1")
        self.R = R
        self.requests: list[HostingRequest] = []
        self.queue: list[tuple[int, str]] = []  # (request_id, chunk_id), FIFO
        self.seeders: dict[bytes, SeederCapacity] = {}
        self.assignments: dict[str, HostingAssignment] = {}
        self.payloads: dict[tuple[str, bytes], Payload] = {}
        self.owner_escrow: dict[bytes, int] = {}
        self.consumed = 0  # leecher tokens ever taken into escrow
        self.burned = 0
        self.refunded = 0
        self._chunks: set[str] = set()

    # -- requests and capacity -------------------------------------------

    def submit_hosting_request(
        self, owner: bytes, tokens: TokenLedger, chunk_ids: Sequence[str], tick: int = 0
    ) -> HostingRequest:
        if not chunk_ids:
            raise EmptyRequest("no chunks")
        dup = self._chunks.intersection(chunk_ids)
        if dup or len(set(chunk_ids)) != len(chunk_ids):
            raise DuplicateChunk(", ".join(sorted(dup)) or "repeated chunk id")
        need = len(chunk_ids)
        if tokens.leecher.get(owner, 0) < need:
            raise InsufficientLeecherTokens(f"need {need}, hold {tokens.leecher.get(owner, 0)}")
        tokens.debit_leecher(owner, need)
        self.owner_escrow[owner] = self.owner_escrow.get(owner, 0) + need
        self.consumed += need
        req = HostingRequest(len(self.requests), owner, tuple(chunk_ids), need, need, tick)
        self.requests.append(req)
        self._chunks.update(chunk_ids)
        self.queue.extend((req.request_id, c) for c in chunk_ids)
        return req

    def register_capacity(self, seeder: bytes, tokens: TokenLedger, n_tokens: int) -> SeederCapacity:
        if n_tokens <= 0:
            raise ZeroCapacity("capacity needs at least one token")
        held = tokens.leecher.get(seeder, 0)
        if held < n_tokens:
            raise InsufficientLeecherTokens(f"need {n_tokens}, hold {held}")
        tokens.debit_leecher(seeder, n_tokens)
        self.consumed += n_tokens
        cap = self.seeders.get(seeder)
        if cap is None:
            cap = self.seeders[seeder] = SeederCapacity(seeder, 0, self.R)
        cap.tokens_committed += n_tokens
        return cap

    def free_capacity(self) -> dict[bytes, int]:
        return {k: c.free_blocks for k, c in self.seeders.items() if c.free_blocks > 0}

    @property
    def pending_demand_mb(self) -> int:
        """Replica-blocks still waiting for hosts: queued chunks plus holes in degraded assignments."""
        holes = sum(self.R - len(a.seeders) for a in self.assignments.values() if a.degraded)
        return len(self.queue) * self.R + holes

    @property
    def available_capacity_mb(self) -> int:
        return sum(self.free_capacity().values())

    # -- matching ----------------------------------------------------------

    def match(self) -> list[HostingAssignment]:
        """Repair degraded assignments, then match queued chunks FIFO.

        Returns every assignment created or changed by this call.
        """
        changed = []
        free = self.free_capacity()
        for a in sorted((a for a in self.assignments.values() if a.degraded), key=lambda a: a.chunk_id):
            if self._refill(a, free):
                changed.append(a)
        still_queued = []
        for request_id, chunk_id in self.queue:
            picked = greedy_pick(free, self.R)
            if picked is None:
                still_queued.append((request_id, chunk_id))
                continue
            owner = self.requests[request_id].owner
            for s in picked:
                free[s] -= 1
                self.seeders[s].assigned_blocks += 1
            a = HostingAssignment(chunk_id, owner, list(picked), request_id=request_id)
            self.assignments[chunk_id] = a
            changed.append(a)
        self.queue = still_queued
        return changed

    def _refill(self, a: HostingAssignment, free: dict[bytes, int]) -> bool:
        before = len(a.seeders)
        while len(a.seeders) < self.R:
            picked = greedy_pick(free, 1, exclude=[*a.seeders, *a.dropped])
            if picked is None:
                break
            s = picked[0]
            free[s] -= 1
            self.seeders[s].assigned_blocks += 1
            a.seeders.append(s)
            a.tracker_published = False
        a.degraded = len(a.seeders) < self.R
        return len(a.seeders) != before

    # -- payload distribution ----------------------------------------------

    def post_payload(self, payload: Payload, commitment_root: bytes) -> None:
        a = self.assignments[payload.chunk_id]
        if payload.seeder_pubkey not in a.seeders:
            raise MarketError("seeder not assigned to this chunk")
        a.payload_commitments[payload.seeder_pubkey] = commitment_root
        self.payloads[(payload.chunk_id, payload.seeder_pubkey)] = payload

    def publish_tracker(self, assignment: HostingAssignment) -> TrackerRecord:
        missing = [s for s in assignment.seeders if s not in assignment.payload_commitments]
        if missing or (len(assignment.seeders) < self.R and not assignment.degraded):
            raise MissingCommitments(f"{len(missing)} of {len(assignment.seeders)} seeders uncommitted")
        entries = tuple((s, assignment.payload_commitments[s]) for s in assignment.seeders)
        assignment.tracker_published = True
        return TrackerRecord(assignment.chunk_id, assignment.owner, entries)

    def fetch_payload(self, chunk_id: str, seeder: bytes) -> Payload | None:
        """What a seeder can pull once the tracker is out: only its own copy."""
        a = self.assignments.get(chunk_id)
        if a is None or not a.tracker_published or seeder not in a.seeders:
            return None
        p = self.payloads.get((chunk_id, seeder))
        if p is None or p.seeder_pubkey != seeder:
            return None
        return p

    # -- failures and expiry -------------------------------------------------

    def handle_dropout(
        self, assignment: HostingAssignment, seeder: bytes, tokens: TokenLedger, tick: int = 0
    ) -> HostingAssignment:
        """Drop a failed seeder, forfeit one of its escrowed tokens, look for a replacement."""
        if seeder not in assignment.seeders:
            return assignment
        cap = self.seeders[seeder]
        assignment.seeders.remove(seeder)
        assignment.dropped.append(seeder)
        assignment.payload_commitments.pop(seeder, None)
        self.payloads.pop((assignment.chunk_id, seeder), None)
        cap.assigned_blocks -= 1
        cap.failed = True
        if cap.escrow > 0:
            cap.forfeited += 1
            self.burned += 1
            tokens.record_leecher_burn(seeder, 1, tick, "dropout")
        self._refill(assignment, self.free_capacity())
        return assignment

    def expire_request(self, request_id: int, tokens: TokenLedger, tick: int = 0, refund: bool = False) -> int:
        """End a hosting term: owner escrow burns (or refunds); seeder blocks free up."""
        req = self.requests[request_id]
        if req.closed:
            return 0
        req.closed = True
        self.queue = [q for q in self.queue if q[0] != request_id]
        for chunk_id in req.chunk_ids:
            a = self.assignments.pop(chunk_id, None)
            if a is None:
                continue
            for s in a.seeders:
                self.seeders[s].assigned_blocks -= 1
                self.payloads.pop((chunk_id, s), None)
        n = req.tokens_escrowed
        self.owner_escrow[req.owner] -= n
        if refund:
            tokens.credit_leecher(req.owner, n)
            self.refunded += n
        else:
            self.burned += n
            tokens.record_leecher_burn(req.owner, n, tick, "hosting_term")
        return n

    # -- audits --------------------------------------------------------------

    def seeder_escrow(self) -> int:
        return sum(c.escrow for c in self.seeders.values())

    def total_escrow(self) -> int:
        return sum(self.owner_escrow.values()) + self.seeder_escrow()

    def escrow_balanced(self) -> bool:
        return self.total_escrow() + self.burned + self.refunded == self.consumed
