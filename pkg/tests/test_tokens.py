import inspect
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from tdchain.crypto import BURN_KEY, KeyPair
from tdchain.ledger import apply_block, genesis, make_block, mint_block_reward
from tdchain import tokens as tk
from tdchain.tokens import (
    ALL,
    ExchangeState,
    InsufficientTokens,
    TokenLedger,
    ZeroMint,
    burn_td_for_leecher,
    exchange_rate,
    leecher_for,
    prepare_td_burn,
)

V = [KeyPair.from_seed(f"v{i}").public_key for i in range(3)]


# -- block rewards ----------------------------------------------------------------------------------


def test_reward_creates_one_coin():
    chain = mint_block_reward(genesis(), V[0])
    assert [chain.utxo_set[c].amount for c in chain.coins_of(V[0])] == [50]


def test_two_rewards_two_coins():
    chain = mint_block_reward(mint_block_reward(genesis(), V[0]), V[0])
    coins = chain.coins_of(V[0])
    assert len(set(coins)) == 2 and chain.balance(V[0]) == 100


def test_ten_blocks_three_validators_supply():
    chain = genesis()
    for i in range(10):
        chain = mint_block_reward(chain, V[i % 3])
    assert chain.supply() == sum(chain.balance(v) for v in V) == 10 * 50


# -- exchange rate ----------------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "demand,capacity,rate",
    [(0, 0, Fraction(1)), (99, 0, Fraction(10)), (0, 99, Fraction(1, 10)), (3, 1, Fraction(2)), (1, 3, Fraction(1, 2))],
)
def test_rate_examples(demand, capacity, rate):
    assert exchange_rate(ExchangeState(demand, capacity)) == rate


def test_rate_scales_with_base():
    assert exchange_rate(ExchangeState(99, 0, base_rate=3)) == 30
    assert exchange_rate(ExchangeState(0, 99, base_rate=3)) == Fraction(3, 10)


@settings(max_examples=200)
@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 50))
def test_rate_monotone(demand, capacity, step):
    r = exchange_rate(ExchangeState(demand, capacity))
    assert exchange_rate(ExchangeState(demand + step, capacity)) >= r
    assert exchange_rate(ExchangeState(demand, capacity + step)) <= r
    assert Fraction(1, 10) <= r <= 10


# -- TD burn -------------------------------------------------------------------------------------------


@pytest.mark.parametrize("td,rate,minted", [(60, 2, 30), (10, 3, 3), (7, Fraction(1, 2), 14), (1, 1, 1)])
def test_floor_mint(td, rate, minted):
    assert leecher_for(td, rate) == minted


def test_burn_sixty_at_rate_two(alice):
    chain = genesis([(100, alice.public_key)])
    tokens = TokenLedger()
    x = ExchangeState(0, 0, base_rate=2)
    tx, minted = burn_td_for_leecher(tokens, chain, alice, 60, x)
    assert minted == 30 and tokens.leecher[alice.public_key] == 30
    burn = [o for o in tx.outputs if o.recipient == BURN_KEY]
    assert [o.amount for o in burn] == [60]
    after = apply_block(chain, make_block(chain, V[0], [tx]))
    assert after.balance(alice.public_key) == 40
    assert after.supply() == 100 + 50 - 60
    assert tokens.burned[tk.TD] == 60


def test_remainder_burned_too(alice):
    chain = genesis([(100, alice.public_key)])
    tx, minted = prepare_td_burn(chain, alice, 10, 3)
    assert minted == 3
    assert sum(o.amount for o in tx.outputs if o.recipient == BURN_KEY) == 10


def test_zero_burn(alice):
    chain = genesis([(100, alice.public_key)])
    with pytest.raises(ZeroMint):
        prepare_td_burn(chain, alice, 0, 1)
    with pytest.raises(ZeroMint):
        prepare_td_burn(chain, alice, 2, 3)


# -- seed bonus ---------------------------------------------------------------------------------------


def test_burn_all_and_one(alice):
    t = TokenLedger()
    t.award_seed_bonus(alice.public_key, 10)
    assert t.burn_seed_bonus(alice.public_key, 1, "win") == 1
    assert t.seed_bonus[alice.public_key] == 9
    assert t.burn_seed_bonus(alice.public_key, ALL, "slash") == 9
    assert t.seed_bonus[alice.public_key] == 0
    with pytest.raises(InsufficientTokens):
        t.burn_seed_bonus(alice.public_key, 1, "x")


def test_burn_log_csv(alice):
    t = TokenLedger()
    t.award_seed_bonus(alice.public_key, 4, tick=3)
    t.burn_seed_bonus(alice.public_key, 4, "slash", tick=5)
    lines = t.burn_log_csv().splitlines()
    assert lines == ["tick,kind,amount,reason,account", f"5,seed_bonus,4,slash,{alice.public_key.hex()}"]


def test_no_transfer_operation():
    # nothing on the ledger takes two accounts
    for name, fn in inspect.getmembers(TokenLedger, inspect.isfunction):
        params = list(inspect.signature(fn).parameters)
        assert sum(p in ("account", "host", "src", "dst", "to", "sender", "recipient") for p in params) <= 1, name


ACCTS = [KeyPair.from_seed(f"acct{i}").public_key for i in range(3)]
_op = st.tuples(
    st.sampled_from(["mint_l", "escrow", "release", "burn_escrow", "award", "burn_sb", "stake", "unstake"]),
    st.integers(0, 2),
    st.integers(0, 20),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(_op, max_size=60))
def test_conservation_and_no_cross_account_moves(ops):
    t = TokenLedger()
    escrow = dict.fromkeys(ACCTS, 0)
    per_account = dict.fromkeys(ACCTS, 0)  # minted minus burned, per account
    for op, i, n in ops:
        a = ACCTS[i]
        before = {b: (t.leecher.get(b, 0) + escrow[b], t.seed_bonus_of(b)) for b in ACCTS}
        if op == "mint_l":
            t.mint_leecher(a, n)
        elif op == "escrow" and t.leecher.get(a, 0) >= n:
            t.debit_leecher(a, n)
            escrow[a] += n
        elif op == "release":
            n = min(n, escrow[a])
            t.credit_leecher(a, n)
            escrow[a] -= n
        elif op == "burn_escrow":
            n = min(n, escrow[a])
            t.record_leecher_burn(a, n, 0, "test")
            escrow[a] -= n
        elif op == "award":
            t.award_seed_bonus(a, n)
            per_account[a] += n
        elif op == "burn_sb":
            per_account[a] -= t.burn_seed_bonus(a, min(n, t.seed_bonus.get(a, 0)), "test")
        elif op == "stake" and a not in t.staked:
            t.lock_stake(a)
        elif op == "unstake" and a in t.staked:
            held = t.staked[a]
            burned = min(n, held)
            t.unlock_stake(a, held - burned, burned, "test")
            per_account[a] -= burned
        # only the acted-on account may change
        for b in ACCTS:
            if b != a:
                assert (t.leecher.get(b, 0) + escrow[b], t.seed_bonus_of(b)) == before[b]
        assert t.minted[tk.LEECHER] - t.burned[tk.LEECHER] == t.total(tk.LEECHER) + sum(escrow.values())
        assert t.minted[tk.SEED_BONUS] - t.burned[tk.SEED_BONUS] == t.total(tk.SEED_BONUS)
    for a in ACCTS:
        assert t.seed_bonus_of(a) == per_account[a]
    # burned tokens never come back: replaying the burn log is monotone
    running = 0
    for e in t.burn_log:
        assert e.amount > 0
        running += e.amount
    assert running == sum(t.burned.values())
