"""UTXO ledger for TD Coin: transactions, blocks, branch-aware chain state.

Coins are spent by signing the digest of the previous transaction together
with the new output list.  A chain state keeps every valid block it has
seen; each branch head carries its own unspent-output view, and the tip is
the longest branch with ties broken by the smaller block hash.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, Protocol, Sequence

from .crypto import BURN_KEY, DIGEST_SIZE, Encoder, KeyPair, digest, verify_signature

Locator = tuple[bytes, int]

ZERO_HASH = bytes(DIGEST_SIZE)
DEFAULT_BLOCK_REWARD = 50
DEFAULT_MAX_TXS = 256


class Violation(enum.Enum):
    DOUBLE_SPEND = "DoubleSpend"
    BAD_SIGNATURE = "BadSignature"
    VALUE_IMBALANCE = "ValueImbalance"
    UNKNOWN_UTXO = "UnknownUtxo"


class LedgerError(Exception):
    pass


class UnknownUtxo(LedgerError):
    pass


class InsufficientFunds(LedgerError):
    pass


class NotOwner(LedgerError):
    pass


class BlockRejected(LedgerError):
    pass


class InvalidTx(BlockRejected):
    def __init__(self, index: int, violation: Violation):
        super().__init__(f"transaction {index}: {violation.value}")
        self.index = index
        self.violation = violation


class BadCoinbase(BlockRejected):
    pass


class UnknownParent(BlockRejected):
    pass


class BadHeader(BlockRejected):
    pass


@dataclass(frozen=True)
class TxInput:
    prev_tx_id: bytes
    output_index: int
    signature: bytes = b""

    @property
    def locator(self) -> Locator:
        return (self.prev_tx_id, self.output_index)


@dataclass(frozen=True)
class TxOutput:
    amount: int
    recipient: bytes


def _write_output(enc: Encoder, out: TxOutput) -> None:
    enc.u64(out.amount).bytes(out.recipient)


def _write_input(enc: Encoder, inp: TxInput) -> None:
    enc.bytes(inp.prev_tx_id).u32(inp.output_index).bytes(inp.signature)


def encode_outputs(outputs: Iterable[TxOutput]) -> bytes:
    return Encoder().seq(outputs, _write_output).getvalue()


def spend_message(prev_tx_id: bytes, output_index: int, outputs: Sequence[TxOutput]) -> bytes:
    """What an input signature covers: the spent transaction and the new outputs."""
    enc = Encoder().str("spend").bytes(prev_tx_id).u32(output_index)
    return digest(enc.getvalue(), encode_outputs(outputs))


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    memo: bytes = b""

    def encode(self) -> bytes:
        enc = Encoder()
        enc.seq(self.inputs, _write_input)
        enc.seq(self.outputs, _write_output)
        enc.bytes(self.memo)
        return enc.getvalue()

    @cached_property
    def tx_id(self) -> bytes:
        return digest(self.encode())

    @property
    def is_coinbase(self) -> bool:
        return not self.inputs

    def output_total(self) -> int:
        return sum(o.amount for o in self.outputs)


class CheckpointRecord(Protocol):
    """Anything a block can carry in its checkpoint area."""

    def encode(self) -> bytes: ...


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    timestamp: int
    validator: bytes
    tx_root: bytes
    records_root: bytes

    def encode(self) -> bytes:
        return (
            Encoder()
            .u64(self.height)
            .bytes(self.prev_hash)
            .u64(self.timestamp)
            .bytes(self.validator)
            .bytes(self.tx_root)
            .bytes(self.records_root)
            .getvalue()
        )

    @cached_property
    def hash(self) -> bytes:
        return digest(self.encode())


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: int
    validator: bytes
    transactions: tuple[Transaction, ...]
    checkpoint_records: tuple = ()

    @cached_property
    def header(self) -> BlockHeader:
        tx_root = digest(b"".join(tx.tx_id for tx in self.transactions))
        records_root = digest(b"".join(digest(r.encode()) for r in self.checkpoint_records))
        return BlockHeader(
            self.height, self.prev_hash, self.timestamp, self.validator, tx_root, records_root
        )

    @property
    def block_hash(self) -> bytes:
        return self.header.hash

    def serialize(self) -> bytes:
        """Full on-chain bytes: header, transactions, checkpoint area."""
        enc = Encoder().raw(self.header.encode())
        enc.seq(self.transactions, lambda e, tx: e.bytes(tx.encode()))
        enc.seq(self.checkpoint_records, lambda e, r: e.bytes(r.encode()))
        return enc.getvalue()


def coinbase(validator: bytes, reward: int, height: int) -> Transaction:
    # height in the memo keeps coinbase ids unique per block
    return Transaction((), (TxOutput(reward, validator),), Encoder().u64(height).getvalue())


@dataclass(frozen=True)
class ChainParams:
    block_reward: int = DEFAULT_BLOCK_REWARD
    max_txs: int = DEFAULT_MAX_TXS


@dataclass
class _BranchView:
    utxo: dict[Locator, TxOutput]
    spent: dict[Locator, bytes]

    def copy(self) -> "_BranchView":
        return _BranchView(dict(self.utxo), dict(self.spent))


@dataclass(frozen=True)
class BlockMeta:
    height: int
    minted: int  # genesis allocation + rewards, cumulative on this branch
    destroyed: int  # burns + fees, cumulative on this branch
    burned: int  # explicit burn outputs only


@dataclass(frozen=True)
class ChainState:
    params: ChainParams
    genesis_hash: bytes
    tip: bytes
    blocks: Mapping[bytes, Block]
    meta: Mapping[bytes, BlockMeta]
    _heads: Mapping[bytes, _BranchView] = field(repr=False)

    @property
    def utxo_set(self) -> Mapping[Locator, TxOutput]:
        return MappingProxyType(self._view(self.tip).utxo)

    @property
    def height(self) -> int:
        return self.meta[self.tip].height

    @property
    def tip_block(self) -> Block:
        return self.blocks[self.tip]

    def supply(self) -> int:
        return sum(o.amount for o in self._view(self.tip).utxo.values())

    def branch(self, head: bytes | None = None) -> list[Block]:
        """Blocks from genesis to ``head`` (default: tip)."""
        h = self.tip if head is None else head
        out = []
        while h != ZERO_HASH:
            b = self.blocks[h]
            out.append(b)
            h = b.prev_hash
        out.reverse()
        return out

    def heads(self) -> list[bytes]:
        return sorted(self._heads)

    def balance(self, owner: bytes) -> int:
        return sum(o.amount for o in self._view(self.tip).utxo.values() if o.recipient == owner)

    def coins_of(self, owner: bytes) -> list[Locator]:
        return sorted(loc for loc, o in self._view(self.tip).utxo.items() if o.recipient == owner)

    def is_spent(self, loc: Locator) -> bool:
        return loc in self._view(self.tip).spent

    def _view(self, head: bytes) -> _BranchView:
        view = self._heads.get(head)
        if view is not None:
            return view
        # interior block: rebuild by folding its branch
        view = _BranchView({}, {})
        for b in self.branch(head):
            _fold(view, b)
        return view

    def digest(self) -> bytes:
        """Digest of the tip and its unspent set; equal states give equal digests."""
        enc = Encoder().bytes(self.tip)
        items = sorted(self._view(self.tip).utxo.items())
        enc.seq(items, lambda e, kv: e.bytes(kv[0][0]).u32(kv[0][1]).u64(kv[1].amount).bytes(kv[1].recipient))
        return digest(enc.getvalue())


def _apply_tx(view: _BranchView, tx: Transaction) -> tuple[int, int]:
    """Apply an already-validated transaction; returns (fee, burned)."""
    spent_total = 0
    for inp in tx.inputs:
        spent_total += view.utxo.pop(inp.locator).amount
        view.spent[inp.locator] = tx.tx_id
    burned = 0
    for i, out in enumerate(tx.outputs):
        if out.recipient == BURN_KEY:
            burned += out.amount
        else:
            view.utxo[(tx.tx_id, i)] = out
    fee = 0 if tx.is_coinbase else spent_total - tx.output_total()
    return fee, burned


def _fold(view: _BranchView, block: Block) -> None:
    for tx in block.transactions:
        _apply_tx(view, tx)


def genesis(
    allocations: Sequence[tuple[int, bytes]] = (),
    params: ChainParams | None = None,
    timestamp: int = 0,
) -> ChainState:
    """Chain with a single height-0 block carrying the initial allocations."""
    params = params or ChainParams()
    txs = tuple(
        Transaction((), (TxOutput(amount, owner),), Encoder().str("genesis").u32(i).getvalue())
        for i, (amount, owner) in enumerate(allocations)
    )
    block = Block(0, ZERO_HASH, timestamp, BURN_KEY, txs)
    view = _BranchView({}, {})
    _fold(view, block)
    h = block.block_hash
    minted = sum(a for a, _ in allocations)
    return ChainState(
        params,
        h,
        h,
        MappingProxyType({h: block}),
        MappingProxyType({h: BlockMeta(0, minted, 0, 0)}),
        MappingProxyType({h: view}),
    )


def _check_tx(tx: Transaction, view: _BranchView) -> Violation | None:
    if not tx.inputs:
        return Violation.UNKNOWN_UTXO
    seen: set[Locator] = set()
    total_in = 0
    for inp in tx.inputs:
        loc = inp.locator
        if loc in seen or loc in view.spent:
            return Violation.DOUBLE_SPEND
        seen.add(loc)
        prev = view.utxo.get(loc)
        if prev is None:
            return Violation.UNKNOWN_UTXO
        msg = spend_message(inp.prev_tx_id, inp.output_index, tx.outputs)
        if not verify_signature(prev.recipient, msg, inp.signature):
            return Violation.BAD_SIGNATURE
        total_in += prev.amount
    if any(o.amount < 0 for o in tx.outputs) or tx.output_total() > total_in:
        return Violation.VALUE_IMBALANCE
    return None


def verify_transaction(tx: Transaction, state: ChainState) -> Violation | None:
    """``None`` when the transaction is valid against the tip, else the violation."""
    return _check_tx(tx, state._view(state.tip))


def select_coins(
    state: ChainState, owner: bytes, amount: int, exclude: Iterable[Locator] = ()
) -> list[Locator]:
    excluded = set(exclude)
    picked, total = [], 0
    for loc in state.coins_of(owner):
        if total >= amount:
            break
        if loc in excluded:
            continue
        picked.append(loc)
        total += state.utxo_set[loc].amount
    if total < amount:
        raise InsufficientFunds(f"{owner.hex()[:12]} holds {total}, needs {amount}")
    return picked


def sign_transaction(
    utxos: Sequence[Locator], outputs: Sequence[TxOutput], signer: KeyPair, memo: bytes = b""
) -> Transaction:
    """Sign without any balance or ownership checks."""
    outputs = tuple(outputs)
    inputs = tuple(
        TxInput(txid, idx, signer.sign(spend_message(txid, idx, outputs))) for txid, idx in utxos
    )
    return Transaction(inputs, outputs, memo)


def create_transaction(
    state: ChainState,
    utxos: Sequence[Locator],
    new_outputs: Sequence[tuple[int, bytes]],
    signer: KeyPair,
    memo: bytes = b"",
) -> Transaction:
    outputs = [TxOutput(a, r) for a, r in new_outputs]
    utxo = state.utxo_set
    total = 0
    for loc in utxos:
        coin = utxo.get(loc)
        if coin is None:
            raise UnknownUtxo(f"{loc[0].hex()[:12]}:{loc[1]}")
        if coin.recipient != signer.public_key:
            raise NotOwner(f"{loc[0].hex()[:12]}:{loc[1]}")
        total += coin.amount
    if any(o.amount < 0 for o in outputs):
        raise ValueError("negative output amount")
    if sum(o.amount for o in outputs) > total:
        raise InsufficientFunds(f"inputs {total} < outputs {sum(o.amount for o in outputs)}")
    return sign_transaction(utxos, outputs, signer, memo)


def make_block(
    state: ChainState,
    validator: bytes,
    transactions: Sequence[Transaction] = (),
    checkpoint_records: Sequence = (),
    timestamp: int | None = None,
    parent: bytes | None = None,
) -> Block:
    """Block on ``parent`` (default tip) with the coinbase prepended."""
    parent = state.tip if parent is None else parent
    height = state.meta[parent].height + 1
    if timestamp is None:
        timestamp = state.blocks[parent].timestamp + 1
    txs = (coinbase(validator, state.params.block_reward, height), *transactions)
    return Block(height, parent, timestamp, validator, txs, tuple(checkpoint_records))


def apply_block(state: ChainState, block: Block) -> ChainState:
    """New state with ``block`` added; raises :class:`BlockRejected` subclasses."""
    h = block.block_hash
    if h in state.blocks:
        return state
    parent_meta = state.meta.get(block.prev_hash)
    if parent_meta is None:
        raise UnknownParent(block.prev_hash.hex())
    if block.height != parent_meta.height + 1:
        raise BadHeader(f"height {block.height} after parent {parent_meta.height}")
    if len(block.transactions) > state.params.max_txs:
        raise BadHeader(f"{len(block.transactions)} transactions exceed {state.params.max_txs}")
    if block.timestamp < state.blocks[block.prev_hash].timestamp:
        raise BadHeader("timestamp before parent")

    txs = block.transactions
    expected = coinbase(block.validator, state.params.block_reward, block.height)
    if not txs or txs[0] != expected:
        raise BadCoinbase(f"first transaction must mint {state.params.block_reward} to validator")

    view = state._view(block.prev_hash).copy()
    fees = burned = 0
    for i, tx in enumerate(txs[1:], start=1):
        if tx.is_coinbase:
            raise BadCoinbase(f"second coinbase at index {i}")
        violation = _check_tx(tx, view)
        if violation is not None:
            raise InvalidTx(i, violation)
        fee, burn = _apply_tx(view, tx)
        fees += fee
        burned += burn
    # coinbase last so it can never fund a spend inside its own block
    _apply_tx(view, txs[0])

    meta = BlockMeta(
        block.height,
        parent_meta.minted + state.params.block_reward,
        parent_meta.destroyed + fees + burned,
        parent_meta.burned + burned,
    )
    blocks = dict(state.blocks)
    blocks[h] = block
    metas = dict(state.meta)
    metas[h] = meta
    heads = dict(state._heads)
    heads.pop(block.prev_hash, None)
    heads[h] = view
    tip = _best(heads, metas)
    return ChainState(
        state.params,
        state.genesis_hash,
        tip,
        MappingProxyType(blocks),
        MappingProxyType(metas),
        MappingProxyType(heads),
    )


def _best(heads: Mapping[bytes, object], metas: Mapping[bytes, BlockMeta]) -> bytes:
    return min(heads, key=lambda h: (-metas[h].height, h))


def select_tip(state: ChainState) -> bytes:
    """Head of the longest branch; equal heights go to the smaller hash."""
    return _best(state._heads, state.meta)


def mint_block_reward(state: ChainState, validator: bytes, timestamp: int | None = None) -> ChainState:
    """Extend the tip with a coinbase-only block paying ``validator``."""
    return apply_block(state, make_block(state, validator, timestamp=timestamp))
