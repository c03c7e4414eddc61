"""Leecher and Seed Bonus token balances, mint/burn logs, TD burn contract.

Neither non-transferable token can move between accounts: every public
operation names a single account and either mints to it, burns from it,
or locks/unlocks part of its own balance.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .crypto import BURN_KEY, KeyPair, Encoder
from .ledger import ChainState, Transaction, create_transaction, select_coins

LEECHER = "leecher"
SEED_BONUS = "seed_bonus"
TD = "td"


class TokenError(Exception):
    pass


class InsufficientTokens(TokenError):
    pass


class ZeroMint(TokenError):
    pass


class _All:
    def __repr__(self) -> str:
        return "ALL"


ALL = _All()


@dataclass(frozen=True)
class LogEntry:
    tick: int
    kind: str
    amount: int
    reason: str
    account: bytes


@dataclass(frozen=True)
class ExchangeState:
    pending_demand_mb: int = 0
    available_capacity_mb: int = 0
    base_rate: Fraction | int = 1


def exchange_rate(x: ExchangeState) -> Fraction:
    """TD per Leecher token: demand/capacity ratio scaled by base_rate, clamped to 10x either way."""
    base = Fraction(x.base_rate)
    raw = base * (1 + x.pending_demand_mb) / (1 + x.available_capacity_mb)
    return min(max(raw, base / 10), base * 10)


RateStrategy = Callable[[ExchangeState], Fraction]


@dataclass
class TokenLedger:
    leecher: dict[bytes, int] = field(default_factory=dict)
    seed_bonus: dict[bytes, int] = field(default_factory=dict)
    # seed bonus locked in the stake pool, still owned by the account
    staked: dict[bytes, int] = field(default_factory=dict)
    minted: Counter = field(default_factory=Counter)
    burned: Counter = field(default_factory=Counter)
    mint_log: list[LogEntry] = field(default_factory=list)
    burn_log: list[LogEntry] = field(default_factory=list)

    # -- leecher -------------------------------------------------------

    def mint_leecher(self, account: bytes, amount: int, tick: int = 0, reason: str = "td_burn") -> None:
        self._mint(LEECHER, self.leecher, account, amount, tick, reason)

    def debit_leecher(self, account: bytes, amount: int) -> None:
        """Lock tokens into market escrow (owned, not spendable)."""
        bal = self.leecher.get(account, 0)
        if amount > bal:
            raise InsufficientTokens(f"leecher balance {bal} < {amount}")
        self.leecher[account] = bal - amount

    def credit_leecher(self, account: bytes, amount: int) -> None:
        """Release escrowed tokens back to the same account."""
        self.leecher[account] = self.leecher.get(account, 0) + amount

    def record_leecher_burn(self, account: bytes, amount: int, tick: int, reason: str) -> None:
        """Burn tokens that already left the balance for escrow."""
        if amount <= 0:
            return
        self._log_burn(LEECHER, account, amount, tick, reason)

    def record_td_burn(self, account: bytes, amount: int, tick: int, reason: str = "leecher_mint") -> None:
        """TD itself lives in the UTXO set; this only keeps the burn audit trail."""
        self._log_burn(TD, account, amount, tick, reason)

    # -- seed bonus ----------------------------------------------------

    def award_seed_bonus(self, host: bytes, amount: int, tick: int = 0, reason: str = "checkpoint") -> None:
        self._mint(SEED_BONUS, self.seed_bonus, host, amount, tick, reason)

    def burn_seed_bonus(self, account: bytes, amount, reason: str, tick: int = 0) -> int:
        """Burn liquid seed bonus; ``amount`` may be :data:`ALL`.  Returns the burned count."""
        bal = self.seed_bonus.get(account, 0)
        n = bal if amount is ALL else amount
        if n > bal:
            raise InsufficientTokens(f"seed bonus balance {bal} < {n}")
        if n == 0:
            return 0
        self.seed_bonus[account] = bal - n
        self._log_burn(SEED_BONUS, account, n, tick, reason)
        return n

    def lock_stake(self, account: bytes) -> int:
        n = self.seed_bonus.get(account, 0)
        self.seed_bonus[account] = 0
        self.staked[account] = self.staked.get(account, 0) + n
        return n

    def unlock_stake(self, account: bytes, returned: int, burned: int, reason: str, tick: int = 0) -> None:
        """Release a stake: ``burned`` is destroyed, ``returned`` goes back to the wallet."""
        held = self.staked.get(account, 0)
        if returned + burned != held:
            raise TokenError(f"stake {held} != returned {returned} + burned {burned}")
        self.staked.pop(account, None)
        self.seed_bonus[account] = self.seed_bonus.get(account, 0) + returned
        if burned:
            self._log_burn(SEED_BONUS, account, burned, tick, reason)

    # -- audits --------------------------------------------------------

    def total(self, kind: str) -> int:
        if kind == LEECHER:
            return sum(self.leecher.values())
        if kind == SEED_BONUS:
            return sum(self.seed_bonus.values()) + sum(self.staked.values())
        raise ValueError(kind)

    def seed_bonus_of(self, account: bytes) -> int:
        """Liquid plus staked."""
        return self.seed_bonus.get(account, 0) + self.staked.get(account, 0)

    def burn_log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tick", "kind", "amount", "reason", "account"])
        for e in self.burn_log:
            w.writerow([e.tick, e.kind, e.amount, e.reason, e.account.hex()])
        return buf.getvalue()

    def _mint(self, kind: str, book: dict, account: bytes, amount: int, tick: int, reason: str) -> None:
        if amount < 0:
            raise ValueError("negative mint")
        if amount == 0:
            return
        book[account] = book.get(account, 0) + amount
        self.minted[kind] += amount
        self.mint_log.append(LogEntry(tick, kind, amount, reason, account))

    def _log_burn(self, kind: str, account: bytes, amount: int, tick: int, reason: str) -> None:
        self.burned[kind] += amount
        self.burn_log.append(LogEntry(tick, kind, amount, reason, account))


def leecher_for(td_amount: int, rate: Fraction | int) -> int:
    """Whole tokens bought by ``td_amount``; the remainder is burned too."""
    rate = Fraction(rate)
    return (td_amount * rate.denominator) // rate.numerator


def prepare_td_burn(
    chain: ChainState,
    buyer: KeyPair,
    td_amount: int,
    rate: Fraction | int,
    exclude: Sequence = (),
) -> tuple[Transaction, int]:
    """Burn transaction for ``td_amount`` and the Leecher tokens it buys.

    Nothing is credited here; see :func:`burn_td_for_leecher`.
    """
    minted = leecher_for(td_amount, rate) if td_amount > 0 else 0
    if minted <= 0:
        raise ZeroMint(f"{td_amount} TD buys no token at rate {rate}")
    coins = select_coins(chain, buyer.public_key, td_amount, exclude)
    change = sum(chain.utxo_set[c].amount for c in coins) - td_amount
    outputs = [(td_amount, BURN_KEY)]
    if change:
        outputs.append((change, buyer.public_key))
    tx = create_transaction(chain, coins, outputs, buyer, Encoder().str("leecher").getvalue())
    return tx, minted


def burn_td_for_leecher(
    tokens: TokenLedger,
    chain: ChainState,
    buyer: KeyPair,
    td_amount: int,
    x: ExchangeState,
    tick: int = 0,
    rate_strategy: RateStrategy = exchange_rate,
) -> tuple[Transaction, int]:
    """Build the burn transaction, credit the Leecher tokens and log the TD burn.

    The caller must get the returned transaction into a block; the
    simulator only calls this while assembling one.
    """
    tx, minted = prepare_td_burn(chain, buyer, td_amount, rate_strategy(x))
    tokens.mint_leecher(buyer.public_key, minted, tick)
    tokens.record_td_burn(buyer.public_key, td_amount, tick)
    return tx, minted
