"""Off-chain storage proofs: Merkle commitments, leaf challenges, checkpoints.

A seeder's encrypted payload is cut into leaves and committed with a
Merkle root.  The verifier challenges random leaves at exponential
intervals; an answer counts only if it arrives before the deadline, every
path reaches the root, and the liveness sample matches the prefix the
verifier kept.  Only per-window pass/fail counts reach the main chain.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .crypto import Encoder, digest
from .market import Payload
from .tokens import TokenLedger

DEFAULT_LEAF_SIZE = 64
DEFAULT_K = 2
DEFAULT_WINDOW = 10
DEFAULT_LIVENESS_LEN = 32


class StorageError(Exception):
    pass


class EmptyPayload(StorageError):
    pass


class DuplicateCheckpoint(StorageError):
    pass


def leaf_hash(leaf: bytes) -> bytes:
    return digest(b"\x00", leaf)


def node_hash(left: bytes, right: bytes) -> bytes:
    return digest(b"\x01", left, right)


def split_leaves(data: bytes, leaf_size: int) -> list[bytes]:
    """Zero-pad into ``leaf_size`` pieces, leaf count a power of two and at least 2."""
    if not data:
        raise EmptyPayload("nothing to commit")
    n = -(-len(data) // leaf_size)
    count = max(2, 1 << (n - 1).bit_length())
    padded = data.ljust(count * leaf_size, b"\x00")
    return [padded[i * leaf_size : (i + 1) * leaf_size] for i in range(count)]


class MerkleTree:
    def __init__(self, leaves: Sequence[bytes]):
        if len(leaves) < 2 or len(leaves) & (len(leaves) - 1):
            raise ValueError("leaf count must be a power of two >= 2")
        level = [leaf_hash(x) for x in leaves]
        self.levels = [level]
        while len(level) > 1:
            level = [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
            self.levels.append(level)

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def path(self, index: int) -> tuple[bytes, ...]:
        out = []
        for level in self.levels[:-1]:
            out.append(level[index ^ 1])
            index //= 2
        return tuple(out)


def verify_path(root: bytes, index: int, leaf: bytes, path: Sequence[bytes], leaf_count: int) -> bool:
    if not 0 <= index < leaf_count or len(path) != leaf_count.bit_length() - 1:
        return False
    h = leaf_hash(leaf)
    for sibling in path:
        h = node_hash(sibling, h) if index & 1 else node_hash(h, sibling)
        index //= 2
    return h == root


@dataclass(frozen=True)
class ChunkCommitment:
    chunk_id: str
    seeder: bytes
    merkle_root: bytes
    leaf_count: int
    leaf_size: int


def commit_chunk(payload: Payload, leaf_size: int = DEFAULT_LEAF_SIZE) -> ChunkCommitment:
    leaves = split_leaves(payload.ciphertext, leaf_size)
    return ChunkCommitment(
        payload.chunk_id, payload.seeder_pubkey, MerkleTree(leaves).root, len(leaves), leaf_size
    )


def retain_prefixes(payload: Payload, leaf_size: int, liveness_len: int = DEFAULT_LIVENESS_LEN) -> tuple[bytes, ...]:
    """The slice of every leaf the verifier keeps for liveness checks."""
    return tuple(leaf[:liveness_len] for leaf in split_leaves(payload.ciphertext, leaf_size))


@dataclass
class StoredPayload:
    """What a seeder keeps on disk.

    Interior hashes are always kept (worst case for the verifier); only
    leaf bodies can be missing.
    """

    chunk_id: str
    tree: MerkleTree
    leaves: dict[int, bytes]
    leaf_count: int

    @classmethod
    def from_payload(cls, payload: Payload, leaf_size: int = DEFAULT_LEAF_SIZE) -> "StoredPayload":
        leaves = split_leaves(payload.ciphertext, leaf_size)
        return cls(payload.chunk_id, MerkleTree(leaves), dict(enumerate(leaves)), len(leaves))

    def discard(self, fraction: float, rng: np.random.Generator) -> "StoredPayload":
        """Keep ``round((1 - fraction) * leaf_count)`` leaves chosen uniformly."""
        keep_n = round((1 - fraction) * self.leaf_count)
        keep = rng.choice(self.leaf_count, size=keep_n, replace=False)
        return StoredPayload(self.chunk_id, self.tree, {int(i): self.leaves[int(i)] for i in keep}, self.leaf_count)


@dataclass(frozen=True)
class Challenge:
    challenge_id: str
    chunk_id: str
    seeder: bytes
    leaf_indices: tuple[int, ...]
    liveness_index: int
    issued_at: int
    deadline: int


def schedule_challenges(
    rng: np.random.Generator,
    commitment: ChunkCommitment,
    mean_interval: float,
    horizon: int,
    k: int = DEFAULT_K,
    window: int = DEFAULT_WINDOW,
    start: int = 0,
) -> list[Challenge]:
    """Challenges at exponential gaps (rounded up, at least one tick) in ``(start, start + horizon]``."""
    if mean_interval <= 0:
        raise ValueError("mean_interval must be positive")
    if window <= 0:
        raise ValueError("response window must be positive")
    if not 1 <= k <= commitment.leaf_count:
        raise ValueError(f"k={k} outside 1..{commitment.leaf_count}")
    out = []
    t = start
    while True:
        t += max(1, math.ceil(rng.exponential(mean_interval)))
        if t > start + horizon:
            break
        indices = tuple(int(i) for i in rng.choice(commitment.leaf_count, size=k, replace=False))
        live = indices[int(rng.integers(k))]
        cid = digest(
            Encoder().str(commitment.chunk_id).bytes(commitment.seeder).u64(t).u64(len(out)).getvalue()
        ).hex()[:16]
        out.append(Challenge(cid, commitment.chunk_id, commitment.seeder, indices, live, t, t + window))
    return out


@dataclass(frozen=True)
class ProofResponse:
    challenge_id: str
    leaves: tuple[tuple[int, bytes, tuple[bytes, ...]], ...]
    liveness_sample: bytes
    responded_at: int


def respond(
    challenge: Challenge,
    stored: StoredPayload | None,
    now: int,
    latency: int = 1,
    liveness_len: int = DEFAULT_LIVENESS_LEN,
) -> ProofResponse | None:
    """Answer from what is on disk; ``None`` when any challenged leaf is missing."""
    if stored is None:
        return None
    if any(i not in stored.leaves for i in challenge.leaf_indices):
        return None
    leaves = tuple((i, stored.leaves[i], stored.tree.path(i)) for i in challenge.leaf_indices)
    sample = stored.leaves[challenge.liveness_index][:liveness_len]
    return ProofResponse(challenge.challenge_id, leaves, sample, now + latency)


class Verdict(enum.Enum):
    PASS = "pass"
    LATE = "Late"
    BAD_PATH = "BadPath"
    BAD_LIVENESS = "BadLiveness"
    WRONG_INDICES = "WrongIndices"


def verify_response(
    challenge: Challenge,
    response: ProofResponse | None,
    commitment: ChunkCommitment,
    retained: Sequence[bytes],
    now: int,
) -> Verdict:
    """``now`` is when the verifier received the response; a missing answer is late."""
    if response is None or max(now, response.responded_at) > challenge.deadline:
        return Verdict.LATE
    if response.challenge_id != challenge.challenge_id:
        return Verdict.WRONG_INDICES
    if tuple(i for i, _, _ in response.leaves) != challenge.leaf_indices:
        return Verdict.WRONG_INDICES
    for index, leaf, path in response.leaves:
        if not verify_path(commitment.merkle_root, index, leaf, path, commitment.leaf_count):
            return Verdict.BAD_PATH
    expected = retained[challenge.liveness_index]
    if response.liveness_sample != expected:
        return Verdict.BAD_LIVENESS
    return Verdict.PASS


# -- checkpoints --------------------------------------------------------------


@dataclass(frozen=True)
class ProofCheckpoint:
    from_tick: int
    to_tick: int
    results: tuple[tuple[bytes, str, int, int], ...]  # (seeder, chunk_id, passed, failed)
    posted_in_block: bytes | None = None

    def encode(self) -> bytes:
        # posted_in_block is assigned after the block hash exists, so it stays out
        enc = Encoder().u8(2).u64(self.from_tick).u64(self.to_tick)
        enc.seq(self.results, lambda e, r: e.bytes(r[0]).str(r[1]).u64(r[2]).u64(r[3]))
        return enc.getvalue()

    @property
    def passes(self) -> int:
        return sum(r[2] for r in self.results)

    @property
    def failures(self) -> int:
        return sum(r[3] for r in self.results)


@dataclass
class ChallengeTally:
    """Per-(seeder, chunk) pass/fail counts inside one session window."""

    from_tick: int
    counts: dict[tuple[bytes, str], list[int]] = field(default_factory=dict)

    def record(self, seeder: bytes, chunk_id: str, verdict: Verdict) -> None:
        c = self.counts.setdefault((seeder, chunk_id), [0, 0])
        c[0 if verdict is Verdict.PASS else 1] += 1

    def close(self, to_tick: int) -> ProofCheckpoint:
        results = tuple((s, ch, p, f) for (s, ch), (p, f) in sorted(self.counts.items()))
        return ProofCheckpoint(self.from_tick, to_tick, results)


def settle_checkpoint(
    checkpoint: ProofCheckpoint,
    tokens: TokenLedger,
    settled: set[tuple[int, int]],
    block_hash: bytes,
    bonus_per_pass: int = 1,
    tick: int = 0,
    on_failure: Callable[[bytes, str], None] | None = None,
) -> ProofCheckpoint:
    """Mint Seed Bonus for the passes recorded in a posted checkpoint.

    ``on_failure(seeder, chunk_id)`` runs once per failed challenge.
    """
    window = (checkpoint.from_tick, checkpoint.to_tick)
    if window in settled:
        raise DuplicateCheckpoint(f"window {window} already settled")
    settled.add(window)
    for seeder, chunk_id, passed, failed in checkpoint.results:
        tokens.award_seed_bonus(seeder, passed * bonus_per_pass, tick, "checkpoint")
        if on_failure is not None:
            for _ in range(failed):
                on_failure(seeder, chunk_id)
    return replace(checkpoint, posted_in_block=block_hash)


def transcript_line(challenge: Challenge, response: ProofResponse | None, verdict: Verdict, received_at: int) -> dict:
    return {
        "challenge_id": challenge.challenge_id,
        "chunk_id": challenge.chunk_id,
        "seeder": challenge.seeder.hex(),
        "leaf_indices": list(challenge.leaf_indices),
        "issued_at": challenge.issued_at,
        "deadline": challenge.deadline,
        "responded_at": None if response is None else response.responded_at,
        "received_at": received_at,
        "verdict": verdict.value,
    }


def all_pass_probability(leaf_count: int, kept: int, k: int, m: int) -> float:
    """Exact chance that ``m`` independent ``k``-distinct-leaf challenges all hit kept leaves."""
    per = math.comb(kept, k) / math.comb(leaf_count, k)
    return per**m
