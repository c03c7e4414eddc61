import hashlib
import struct

import pytest
from hypothesis import given, settings, strategies as st

from tdchain.crypto import BURN_KEY, KeyPair
from tdchain.ledger import (
    BadCoinbase,
    BadHeader,
    Block,
    ChainParams,
    InvalidTx,
    NotOwner,
    TxInput,
    TxOutput,
    Transaction,
    UnknownParent,
    UnknownUtxo,
    Violation,
    apply_block,
    coinbase,
    create_transaction,
    genesis,
    make_block,
    select_tip,
    sign_transaction,
    verify_transaction,
)

MINER = KeyPair.from_seed("miner").public_key


def _u32(v):
    return struct.pack("<I", v)


def _lp(b):
    return _u32(len(b)) + b


def _sha(*parts):
    return hashlib.sha256(b"".join(parts)).digest()


def _outputs_bytes(outputs):
    return _u32(len(outputs)) + b"".join(struct.pack("<Q", o.amount) + _lp(o.recipient) for o in outputs)


def _tx_id(tx):
    ins = _u32(len(tx.inputs)) + b"".join(_lp(i.prev_tx_id) + _u32(i.output_index) + _lp(i.signature) for i in tx.inputs)
    return _sha(ins + _outputs_bytes(tx.outputs) + _lp(tx.memo))


def _extend(chain, txs=(), validator=MINER, parent=None, **kw):
    return apply_block(chain, make_block(chain, validator, txs, parent=parent, **kw))


# -- digests frozen from an independent hashlib/struct derivation ----------------------------------


def test_genesis_digest_matches_oracle(alice):
    g = genesis([(50, alice.public_key)])
    tx = g.blocks[g.tip].transactions[0]
    assert tx.tx_id.hex() == "f097816a8eba417dd6b99d80a52f848b7e27abecb7918eb3b26132673c2aa604"
    assert g.tip.hex() == "9a7f5ff9a89cfb1bd714179abee55b7cb1eaf501c0657c1e74b420327019e2cc"
    assert g.height == 0 and g.supply() == 50


def test_coinbase_id_matches_oracle(alice):
    tx = coinbase(alice.public_key, 50, 1)
    assert tx.tx_id.hex() == "5c0612adeaab03c474ef7a360d9879118b9375065c8087c3c1238986afd654c3"
    assert tx.tx_id == _tx_id(tx)


# -- create / verify -----------------------------------------------------------------------------------


def test_split_coin_with_change(alice, bob):
    chain = genesis([(50, alice.public_key)])
    coin = chain.coins_of(alice.public_key)[0]
    tx = create_transaction(chain, [coin], [(30, bob.public_key), (20, alice.public_key)], alice)
    assert len(tx.inputs) == 1 and len(tx.outputs) == 2
    assert verify_transaction(tx, chain) is None
    after = _extend(chain, [tx])
    assert after.meta[after.tip].destroyed == 0  # fee 0
    assert after.balance(bob.public_key) == 30
    assert after.balance(alice.public_key) == 20


def test_spending_foreign_coin_is_not_owner(alice, bob):
    chain = genesis([(50, alice.public_key)])
    coin = chain.coins_of(alice.public_key)[0]
    with pytest.raises(NotOwner):
        create_transaction(chain, [coin], [(50, bob.public_key)], bob)


def test_unknown_coin(alice):
    chain = genesis([(50, alice.public_key)])
    with pytest.raises(UnknownUtxo):
        create_transaction(chain, [(bytes(32), 0)], [(1, alice.public_key)], alice)
    tx = sign_transaction([(bytes(32), 0)], [TxOutput(1, alice.public_key)], alice)
    assert verify_transaction(tx, chain) is Violation.UNKNOWN_UTXO


def test_three_hop_chain_checked_by_independent_walker(keys):
    a, b, c, d = (keys(n) for n in "abcd")
    chain = genesis([(40, a.public_key)])
    txs = []
    for src, dst in ((a, b), (b, c), (c, d)):
        coin = chain.coins_of(src.public_key)[0]
        tx = create_transaction(chain, [coin], [(40, dst.public_key)], src)
        assert verify_transaction(tx, chain) is None
        chain = _extend(chain, [tx])
        txs.append(tx)

    # walk prev_tx hashes back to genesis with a separate hash/encoding implementation
    known = {_tx_id(t): t for t in chain.blocks[chain.genesis_hash].transactions}
    secret = {k.public_key: k.secret_key for k in (a, b, c, d)}
    for tx in txs:
        for inp in tx.inputs:
            prev = known[inp.prev_tx_id]
            owner = prev.outputs[inp.output_index].recipient
            msg = _sha(_lp(b"spend") + _lp(inp.prev_tx_id) + _u32(inp.output_index), _outputs_bytes(tx.outputs))
            assert inp.signature == _sha(secret[owner], msg)
        known[_tx_id(tx)] = tx
    assert chain.balance(d.public_key) == 40


def test_second_spend_is_double_spend(alice, bob):
    chain = genesis([(50, alice.public_key)])
    coin = chain.coins_of(alice.public_key)[0]
    first = create_transaction(chain, [coin], [(50, bob.public_key)], alice)
    again = create_transaction(chain, [coin], [(10, alice.public_key)], alice)
    chain = _extend(chain, [first])
    assert verify_transaction(again, chain) is Violation.DOUBLE_SPEND


def test_tampered_amount_breaks_signature(alice, bob):
    chain = genesis([(50, alice.public_key)])
    coin = chain.coins_of(alice.public_key)[0]
    tx = create_transaction(chain, [coin], [(30, bob.public_key)], alice)
    forged = Transaction(tx.inputs, (TxOutput(31, bob.public_key),), tx.memo)
    assert verify_transaction(forged, chain) is Violation.BAD_SIGNATURE


def test_outputs_over_inputs_is_imbalance(alice, bob):
    chain = genesis([(50, alice.public_key)])
    coin = chain.coins_of(alice.public_key)[0]
    tx = sign_transaction([coin], [TxOutput(51, bob.public_key)], alice)
    assert verify_transaction(tx, chain) is Violation.VALUE_IMBALANCE


# -- blocks ------------------------------------------------------------------------------------------------


def test_block_folds_spends_outputs_and_coinbase(alice, bob):
    chain = genesis([(50, alice.public_key), (7, bob.public_key)])
    before = set(chain.utxo_set)
    coin = chain.coins_of(alice.public_key)[0]
    tx = create_transaction(chain, [coin], [(30, bob.public_key), (20, alice.public_key)], alice)
    after = _extend(chain, [tx])
    now = set(after.utxo_set)
    assert coin not in now
    assert before - now == {coin}
    assert len(now - before) == 3  # two outputs plus the coinbase
    assert after.supply() == 57 + 50


def test_two_spends_in_one_block(alice, bob):
    chain = genesis([(50, alice.public_key)])
    coin = chain.coins_of(alice.public_key)[0]
    t1 = create_transaction(chain, [coin], [(50, bob.public_key)], alice)
    t2 = create_transaction(chain, [coin], [(49, bob.public_key)], alice)
    with pytest.raises(InvalidTx) as exc:
        _extend(chain, [t1, t2])
    assert exc.value.violation is Violation.DOUBLE_SPEND and exc.value.index == 2


def test_inflated_coinbase_rejected():
    chain = genesis()
    good = make_block(chain, MINER)
    bad = Block(good.height, good.prev_hash, good.timestamp, MINER, (coinbase(MINER, 51, 1),))
    with pytest.raises(BadCoinbase):
        apply_block(chain, bad)


def test_header_checks():
    chain = genesis()
    b = make_block(chain, MINER)
    with pytest.raises(UnknownParent):
        apply_block(chain, Block(1, b"\x01" * 32, 1, MINER, b.transactions))
    with pytest.raises(BadHeader):
        apply_block(chain, Block(2, chain.tip, 1, MINER, (coinbase(MINER, 50, 2),)))
    small = genesis(params=ChainParams(max_txs=1))
    with pytest.raises(BadHeader):
        apply_block(small, make_block(small, MINER, [coinbase(MINER, 50, 9)]))


def test_reapplying_block_is_noop():
    chain = genesis()
    b = make_block(chain, MINER)
    once = apply_block(chain, b)
    assert apply_block(once, b) is once


# -- fork choice -----------------------------------------------------------------------------------------


def _branch(chain, n, validator, parent=None):
    for _ in range(n):
        block = make_block(chain, validator, parent=parent)
        chain = apply_block(chain, block)
        parent = block.block_hash
    return chain, parent


def test_single_branch_tip():
    chain, head = _branch(genesis(), 3, MINER)
    assert select_tip(chain) == head == chain.tip and chain.height == 3


def test_longer_branch_wins(keys):
    g = genesis()
    chain, h4 = _branch(g, 4, keys("v1").public_key)
    chain, h5 = _branch(chain, 5, keys("v2").public_key, parent=g.tip)
    assert select_tip(chain) == h5
    assert set(chain.heads()) == {h4, h5}


def test_equal_heights_pick_smaller_hash(keys):
    g = genesis()
    chain, h1 = _branch(g, 4, keys("v1").public_key)
    chain, h2 = _branch(chain, 4, keys("v2").public_key, parent=g.tip)
    smaller = h1 if h1.hex() < h2.hex() else h2
    assert select_tip(chain) == smaller == chain.tip


def test_spend_is_per_branch(alice, bob, keys):
    # a coin spent on one fork is still unspent on the other
    g = genesis([(50, alice.public_key)])
    coin = g.coins_of(alice.public_key)[0]
    tx = create_transaction(g, [coin], [(50, bob.public_key)], alice)
    a = apply_block(g, make_block(g, keys("v1").public_key, [tx]))
    other = make_block(g, keys("v2").public_key, [tx])
    both = apply_block(a, other)
    assert len(both.heads()) == 2


# -- properties --------------------------------------------------------------------------------------------

HOLDERS = [KeyPair.from_seed(f"h{i}") for i in range(4)]


@st.composite
def _ops(draw):
    return draw(st.lists(
        st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 60), st.booleans()),
        min_size=1, max_size=25,
    ))


def _run_ops(ops):
    chain = genesis([(100, k.public_key) for k in HOLDERS])
    burned = 0
    for src, dst, amount, burn in ops:
        k = HOLDERS[src]
        bal = chain.balance(k.public_key)
        txs = []
        if bal:
            amount = min(amount, bal)
            coins = chain.coins_of(k.public_key)
            total = sum(chain.utxo_set[c].amount for c in coins)
            to = BURN_KEY if burn else HOLDERS[dst].public_key
            outs = [(amount, to), (total - amount, k.public_key)]
            txs.append(create_transaction(chain, coins, outs, k))
            burned += amount if burn else 0
        chain = _extend(chain, txs)
    return chain, burned


@settings(max_examples=60, deadline=None)
@given(_ops())
def test_supply_is_minted_minus_burned(ops):
    chain, burned = _run_ops(ops)
    assert chain.supply() == 400 + chain.height * 50 - burned
    assert chain.meta[chain.tip].burned == burned


@settings(max_examples=30, deadline=None)
@given(_ops())
def test_same_blocks_same_digest(ops):
    a, _ = _run_ops(ops)
    b, _ = _run_ops(ops)
    assert a.digest() == b.digest()
    replay = genesis([(100, k.public_key) for k in HOLDERS])
    for block in a.branch()[1:]:
        replay = apply_block(replay, block)
    assert replay.digest() == a.digest()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 3)), min_size=2, max_size=12), st.randoms())
def test_conflicting_spends_after_first_rejected(spends, rnd):
    chain = genesis([(10, k.public_key) for k in HOLDERS])
    coins = {k.public_key: chain.coins_of(k.public_key)[0] for k in HOLDERS}
    used = set()
    for who, n in spends:
        k = HOLDERS[who]
        coin = coins[k.public_key]
        tx = sign_transaction([coin], [TxOutput(n, HOLDERS[rnd.randrange(4)].public_key)], k, bytes([n]))
        v = verify_transaction(tx, chain)
        if coin in used:
            assert v is Violation.DOUBLE_SPEND
            with pytest.raises(InvalidTx):
                _extend(chain, [tx])
        else:
            assert v is None
            chain = _extend(chain, [tx])
            used.add(coin)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 3), st.integers(1, 10), st.text(min_size=1, max_size=8))
def test_wrong_key_never_verifies(who, amount, seed):
    chain = genesis([(10, k.public_key) for k in HOLDERS])
    owner = HOLDERS[who]
    thief = KeyPair.from_seed("thief/" + seed)
    coin = chain.coins_of(owner.public_key)[0]
    tx = sign_transaction([coin], [TxOutput(amount, thief.public_key)], thief)
    assert verify_transaction(tx, chain) is not None
    # right key, wrong signature bytes
    inp = TxInput(coin[0], coin[1], b"\x00" * 32)
    assert verify_transaction(Transaction((inp,), tx.outputs), chain) is Violation.BAD_SIGNATURE
