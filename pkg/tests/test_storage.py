import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdchain.consensus import make_rng
from tdchain.crypto import KeyPair
from tdchain.market import build_payload
from tdchain.storage import (
    ChallengeTally,
    DuplicateCheckpoint,
    EmptyPayload,
    MerkleTree,
    ProofResponse,
    StoredPayload,
    Verdict,
    all_pass_probability,
    commit_chunk,
    respond,
    retain_prefixes,
    schedule_challenges,
    settle_checkpoint,
    split_leaves,
    verify_path,
    verify_response,
)
from tdchain.tokens import TokenLedger

OWNER = KeyPair.from_seed("owner")
S1, S2 = KeyPair.from_seed("s1"), KeyPair.from_seed("s2")


def _oracle_root(data: bytes, leaf_size: int = 64) -> bytes:
    """Recursive top-down Merkle root, sharing nothing with the package."""
    h = lambda *p: hashlib.sha256(b"".join(p)).digest()  # noqa: E731
    n = -(-len(data) // leaf_size)
    count = 2
    while count < n:
        count *= 2
    data += bytes(count * leaf_size - len(data))
    leaves = [data[i : i + leaf_size] for i in range(0, len(data), leaf_size)]

    def rec(lo, hi):
        if hi - lo == 1:
            return h(b"\x00", leaves[lo])
        mid = (lo + hi) // 2
        return h(b"\x01", rec(lo, mid), rec(mid, hi))

    return rec(0, count)


def _payload(seeder=S1, data=b"z" * 1024, nonce=bytes(16)):
    return build_payload(OWNER, "chunk", data, seeder.public_key, nonce)


def _setup(seeder=S1, **kw):
    p = _payload(seeder, **kw)
    com = commit_chunk(p)
    return p, com, retain_prefixes(p, com.leaf_size), StoredPayload.from_payload(p)


# -- commitments ------------------------------------------------------------------------------------------


def test_frozen_roots():
    assert MerkleTree(split_leaves(bytes(range(256)), 64)).root.hex() == (
        "60a375dc8e2edebb7508bed053f6911839a5a7b9e2e7fae09e2cb1adcba97174"
    )
    assert MerkleTree(split_leaves(b"abc", 64)).root.hex() == (
        "0ccf6c512d8c9eef21bf7d02bfd1453c0ecf803d31fd2ef35e11519d5e7b3a4c"
    )


def test_flip_one_byte_changes_root():
    data = bytearray(range(256))
    before = MerkleTree(split_leaves(bytes(data), 64)).root
    data[100] ^= 1
    assert MerkleTree(split_leaves(bytes(data), 64)).root != before


def test_single_leaf_padded_to_two():
    leaves = split_leaves(b"x", 64)
    assert len(leaves) == 2 and leaves[1] == bytes(64)
    with pytest.raises(EmptyPayload):
        split_leaves(b"", 64)


@settings(max_examples=100)
@given(st.binary(min_size=1, max_size=2000), st.sampled_from([16, 32, 64, 100]))
def test_root_matches_independent_oracle(data, leaf_size):
    assert MerkleTree(split_leaves(data, leaf_size)).root == _oracle_root(data, leaf_size)


@settings(max_examples=100)
@given(st.binary(min_size=1, max_size=600), st.data())
def test_mutated_paths_and_leaves_fail(data, draw):
    leaves = split_leaves(data, 32)
    tree = MerkleTree(leaves)
    i = draw.draw(st.integers(0, len(leaves) - 1))
    path = list(tree.path(i))
    assert verify_path(tree.root, i, leaves[i], path, len(leaves))
    j = draw.draw(st.integers(0, len(path) - 1))
    bad = bytearray(path[j])
    bad[draw.draw(st.integers(0, 31))] ^= 1 << draw.draw(st.integers(0, 7))
    assert not verify_path(tree.root, i, leaves[i], path[:j] + [bytes(bad)] + path[j + 1 :], len(leaves))
    leaf = bytearray(leaves[i])
    leaf[draw.draw(st.integers(0, 31))] ^= 1
    assert not verify_path(tree.root, i, bytes(leaf), path, len(leaves))
    assert not verify_path(tree.root, i, leaves[i], path[:-1], len(leaves))


# -- scheduling ---------------------------------------------------------------------------------------------


def test_horizon_zero_is_empty():
    _, com, _, _ = _setup()
    assert schedule_challenges(make_rng(0), com, 50, 0) == []


def test_challenge_count_tracks_mean_interval():
    _, com, _, _ = _setup()
    counts = [len(schedule_challenges(make_rng(seed), com, 100, 10_000)) for seed in range(50)]
    assert all(70 <= c <= 130 for c in counts)
    assert abs(np.mean(counts) - 100) <= 3


def test_indices_distinct_and_in_range():
    _, com, _, _ = _setup()
    for c in schedule_challenges(make_rng(1), com, 5, 2000, k=4):
        assert len(set(c.leaf_indices)) == 4
        assert all(0 <= i < com.leaf_count for i in c.leaf_indices)
        assert c.liveness_index in c.leaf_indices
        assert c.deadline > c.issued_at


def test_k_larger_than_leaves_rejected():
    _, com, _, _ = _setup(data=b"x")
    with pytest.raises(ValueError):
        schedule_challenges(make_rng(0), com, 10, 100, k=3)


# -- respond / verify -----------------------------------------------------------------------------------------


def _first(com, k=2):
    return schedule_challenges(make_rng(2), com, 10, 1000, k=k)[0]


def test_honest_response_passes_before_deadline():
    _, com, kept, stored = _setup()
    c = _first(com)
    r = respond(c, stored, c.issued_at, latency=1)
    assert r.responded_at == c.issued_at + 1
    assert verify_response(c, r, com, kept, c.deadline - 1) is Verdict.PASS


def test_late_at_deadline_plus_one():
    _, com, kept, stored = _setup()
    c = _first(com)
    r = respond(c, stored, c.deadline + 1, latency=0)
    assert verify_response(c, r, com, kept, c.deadline + 1) is Verdict.LATE
    on_time = respond(c, stored, c.deadline, latency=0)
    assert verify_response(c, on_time, com, kept, c.deadline) is Verdict.PASS


def test_deleted_payload_gives_no_response():
    _, com, kept, _ = _setup()
    c = _first(com)
    assert respond(c, None, c.issued_at) is None
    assert verify_response(c, None, com, kept, c.issued_at) is Verdict.LATE


def test_swapped_payload_fails_bad_path():
    _, com1, kept1, _ = _setup(S1)
    _, _, _, stored2 = _setup(S2)
    c = _first(com1)
    r = respond(c, stored2, c.issued_at)
    assert verify_response(c, r, com1, kept1, c.issued_at + 1) is Verdict.BAD_PATH


def test_bad_liveness_and_wrong_indices():
    _, com, kept, stored = _setup()
    c = _first(com)
    r = respond(c, stored, c.issued_at)
    stale = ProofResponse(r.challenge_id, r.leaves, bytes([r.liveness_sample[0] ^ 1]) + r.liveness_sample[1:], r.responded_at)
    assert verify_response(c, stale, com, kept, c.issued_at + 1) is Verdict.BAD_LIVENESS
    shuffled = ProofResponse(r.challenge_id, r.leaves[::-1], r.liveness_sample, r.responded_at)
    assert verify_response(c, shuffled, com, kept, c.issued_at + 1) is Verdict.WRONG_INDICES


def test_half_kept_single_leaf_challenges():
    # P(all 20 pass) = 0.5^20 exactly when leaves are kept by halves and k = 1
    assert all_pass_probability(32, 16, 1, 20) == 0.5**20
    caught = 0
    for trial in range(100):
        _, com, kept, stored = _setup(data=bytes([trial]) * 1024)
        stored = stored.discard(0.5, make_rng(9, trial))
        assert len(stored.leaves) == 16
        sched = schedule_challenges(make_rng(10, trial), com, 10, 10_000, k=1)[:20]
        caught += any(
            verify_response(c, respond(c, stored, c.issued_at), com, kept, c.issued_at + 1) is not Verdict.PASS
            for c in sched
        )
    assert caught >= 99


def test_hypergeometric_probability():
    assert math.isclose(all_pass_probability(32, 16, 2, 1), (16 * 15) / (32 * 31))


# -- checkpoints ----------------------------------------------------------------------------------------------


def test_three_passes_mint_three():
    t = TokenLedger()
    tally = ChallengeTally(0)
    for _ in range(3):
        tally.record(S1.public_key, "c", Verdict.PASS)
    cp = settle_checkpoint(tally.close(10), t, set(), b"h" * 32, bonus_per_pass=1)
    assert t.seed_bonus[S1.public_key] == 3 and cp.posted_in_block == b"h" * 32


def test_failures_trigger_handler_and_no_bonus():
    t = TokenLedger()
    tally = ChallengeTally(0)
    tally.record(S1.public_key, "c", Verdict.LATE)
    tally.record(S1.public_key, "c", Verdict.BAD_PATH)
    calls = []
    settle_checkpoint(tally.close(10), t, set(), b"h" * 32, on_failure=lambda s, c: calls.append((s, c)))
    assert calls == [(S1.public_key, "c")] * 2
    assert t.seed_bonus.get(S1.public_key, 0) == 0


def test_window_settles_once():
    settled = set()
    cp = ChallengeTally(0).close(10)
    settle_checkpoint(cp, TokenLedger(), settled, b"a" * 32)
    with pytest.raises(DuplicateCheckpoint):
        settle_checkpoint(cp, TokenLedger(), settled, b"b" * 32)


def test_posted_block_not_in_encoding():
    tally = ChallengeTally(5)
    tally.record(S1.public_key, "c", Verdict.PASS)
    cp = tally.close(15)
    posted = settle_checkpoint(cp, TokenLedger(), set(), b"x" * 32)
    assert posted.encode() == cp.encode() and posted.encode()[0] == 2
