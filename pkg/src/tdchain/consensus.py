"""Proof of stake over Seed Bonus tokens.

A round: stakers lock their whole Seed Bonus balance, one validator is
drawn with probability proportional to stake, its block is applied, a
fraction of its stake burns and the rest returns.  Every other stake is
released when the round ends.  Double-signing burns everything the
offender holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple

import numpy as np

from .crypto import KeyPair, digest, verify_signature
from .ledger import Block, BlockHeader, BlockRejected, ChainState, apply_block
from .tokens import ALL, TokenLedger


class ConsensusError(Exception):
    pass


class NothingToStake(ConsensusError):
    pass


class AlreadyStaked(ConsensusError):
    pass


class Barred(ConsensusError):
    pass


class EmptyPool(ConsensusError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator; ``stream`` selects an independent sub-stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def as_fraction(x) -> Fraction:
    # via str so 0.1 means one tenth, not its binary neighbour
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass
class StakePool:
    rng: np.random.Generator
    entries: dict[bytes, int] = field(default_factory=dict)
    round: int = 0
    barred: set[bytes] = field(default_factory=set)

    @classmethod
    def seeded(cls, seed: int) -> "StakePool":
        return cls(make_rng(seed, 0x5EED))

    def total(self) -> int:
        return sum(self.entries.values())


@dataclass(frozen=True)
class RoundOutcome:
    round: int
    selected: bytes
    block: bytes | None
    burned: int
    returned: int
    slashed: tuple[bytes, ...] = ()
    voided: str = ""

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "selected": self.selected.hex(),
            "block": self.block.hex() if self.block else None,
            "burned": self.burned,
            "returned": self.returned,
            "slashed": [s.hex() for s in self.slashed],
            "voided": self.voided,
        }


def register_stake(pool: StakePool, tokens: TokenLedger, account: bytes) -> StakePool:
    if account in pool.entries:
        raise AlreadyStaked(account.hex()[:12])
    if account in pool.barred:
        raise Barred(account.hex()[:12])
    if tokens.seed_bonus.get(account, 0) <= 0:
        raise NothingToStake(account.hex()[:12])
    pool.entries[account] = tokens.lock_stake(account)
    return pool


def select_validator(pool: StakePool) -> bytes:
    """Stake-weighted draw; advances ``pool.rng``."""
    candidates = sorted((k, v) for k, v in pool.entries.items() if v > 0 and k not in pool.barred)
    total = sum(v for _, v in candidates)
    if total <= 0:
        raise EmptyPool("no stake registered")
    r = int(pool.rng.integers(total))
    for key, stake in candidates:
        if r < stake:
            return key
        r -= stake
    raise AssertionError("unreachable")


def finalize_round(
    pool: StakePool,
    tokens: TokenLedger,
    chain: ChainState,
    winner: bytes,
    block: Block,
    burn_fraction=Fraction(1, 10),
    tick: int = 0,
) -> tuple[RoundOutcome, ChainState]:
    """Apply the winner's block and settle its stake.

    An invalid block voids the round: no reward, stake returned untouched.
    """
    stake = pool.entries.pop(winner, 0)
    if block.validator != winner:
        tokens.unlock_stake(winner, stake, 0, "voided", tick)
        return RoundOutcome(pool.round, winner, None, 0, stake, voided="wrong validator"), chain
    try:
        new_chain = apply_block(chain, block)
    except BlockRejected as exc:
        tokens.unlock_stake(winner, stake, 0, "voided", tick)
        return RoundOutcome(pool.round, winner, None, 0, stake, voided=f"invalid block: {exc}"), chain
    burned = min(stake, math.ceil(as_fraction(burn_fraction) * stake))
    tokens.unlock_stake(winner, stake - burned, burned, "validator_burn", tick)
    return RoundOutcome(pool.round, winner, block.block_hash, burned, stake - burned), new_chain


def void_round(pool: StakePool, tokens: TokenLedger, winner: bytes, reason: str, tick: int = 0) -> RoundOutcome:
    """Selected validator produced nothing usable; stake returns intact."""
    stake = pool.entries.pop(winner, 0)
    if winner in tokens.staked:
        tokens.unlock_stake(winner, stake, 0, "voided", tick)
    return RoundOutcome(pool.round, winner, None, 0, stake, voided=reason)


def end_round(pool: StakePool, tokens: TokenLedger, tick: int = 0) -> None:
    """Stakes lock for one round: release everything still in the pool.

    Slashed accounts stay barred for good.
    """
    for account in sorted(pool.entries):
        tokens.unlock_stake(account, pool.entries[account], 0, "unlock", tick)
    pool.entries.clear()
    pool.round += 1


class SignedHeader(NamedTuple):
    header: BlockHeader
    signature: bytes
    validator: bytes


def header_message(header: BlockHeader) -> bytes:
    return digest(b"tdchain/header", header.hash)


def sign_header(key: KeyPair, header: BlockHeader) -> SignedHeader:
    return SignedHeader(header, key.sign(header_message(header)), key.public_key)


def detect_equivocation(sigs: Iterable[SignedHeader]) -> list[bytes]:
    """Validators with two or more distinct validly signed headers at one height."""
    seen: dict[tuple[bytes, int], set[bytes]] = {}
    for header, signature, validator in sigs:
        if header.validator != validator:
            continue
        if not verify_signature(validator, header_message(header), signature):
            continue
        seen.setdefault((validator, header.height), set()).add(header.hash)
    return sorted({v for (v, _), hashes in seen.items() if len(hashes) >= 2})


def slash(pool: StakePool, tokens: TokenLedger, offender: bytes, tick: int = 0) -> int:
    """Burn the offender's staked and liquid Seed Bonus; returns the amount burned."""
    staked = pool.entries.pop(offender, 0)
    burned = 0
    if offender in tokens.staked:
        held = tokens.staked[offender]
        tokens.unlock_stake(offender, 0, held, "slash", tick)
        burned += held
    burned += tokens.burn_seed_bonus(offender, ALL, "slash", tick)
    assert staked <= burned
    pool.barred.add(offender)
    return burned
