"""Built-in acceptance suite.

Each check returns a :class:`Result`; a check passes only when its
assertion holds and it finishes inside its time budget.  ``quick`` trims
sample sizes for a smoke run and is never used by the test suite.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .config import ScenarioConfig, inject_adversary
from .consensus import (
    NothingToStake,
    StakePool,
    end_round,
    make_rng,
    register_stake,
    select_validator,
)
from .crypto import BURN_KEY, KeyPair
from .ledger import (
    BlockRejected,
    InvalidTx,
    Violation,
    apply_block,
    create_transaction,
    genesis,
    make_block,
    sign_transaction,
    TxOutput,
    verify_transaction,
)
from .market import HostingMarket, build_payload
from .metrics import audit_events
from .sim import Scenario
from .storage import (
    StoredPayload,
    Verdict,
    commit_chunk,
    respond,
    retain_prefixes,
    schedule_challenges,
    verify_response,
)
from .tokens import ExchangeState, TokenLedger, exchange_rate, prepare_td_burn


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    budget: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:>2} {self.name}: {self.detail} ({self.seconds:.2f}s / {self.budget:g}s)"


def _timed(number: int, name: str, budget: float, fn: Callable[[], tuple[bool, str]]) -> Result:
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    if dt >= budget:
        detail += "; over budget"
    return Result(number, name, ok and dt < budget, detail, dt, budget)


def _keys(prefix: str, n: int) -> list[KeyPair]:
    return [KeyPair.from_seed(f"{prefix}-{i}") for i in range(n)]


# -- 1 ------------------------------------------------------------------------------


def capacity_arithmetic() -> tuple[bool, str]:
    tokens = TokenLedger()
    market = HostingMarket(R=5)
    big = KeyPair.from_seed("acc1/big")
    tokens.mint_leecher(big.public_key, 50)
    blocks = market.register_capacity(big.public_key, tokens, 50).capacity_blocks

    owner = KeyPair.from_seed("acc1/owner")
    chain = genesis([(100, owner.public_key)])
    rate = exchange_rate(ExchangeState(0, 0, base_rate=2))
    tx, minted = prepare_td_burn(chain, owner, 60, rate)
    chain = apply_block(chain, make_block(chain, owner.public_key, [tx]))
    tokens.mint_leecher(owner.public_key, minted)

    market2 = HostingMarket(R=5)
    for s in _keys("acc1/seeder", 5):
        tokens.mint_leecher(s.public_key, 6)
        market2.register_capacity(s.public_key, tokens, 6)
    market2.submit_hosting_request(owner.public_key, tokens, [f"c{i}" for i in range(30)])
    made = market2.match()
    full = [a for a in made if not a.degraded and len(set(a.seeders)) == 5]
    ok = blocks == 250 and rate == 2 and minted >= 30 and len(full) == 30 and not market2.queue
    return ok, f"50 tokens -> {blocks} blocks; 60 TD at rate {rate} -> {minted} tokens; {len(full)}/30 chunks fully matched"


# -- 2 ------------------------------------------------------------------------------


def stake_selection(rounds: int = 10_000) -> tuple[bool, str]:
    accounts = _keys("acc2/validator", 4)
    zero = KeyPair.from_seed("acc2/zero").public_key
    tokens = TokenLedger()
    for i, k in enumerate(accounts):
        tokens.award_seed_bonus(k.public_key, i + 1)
    pool = StakePool(make_rng(2024, 2))
    counts = dict.fromkeys([k.public_key for k in accounts] + [zero], 0)
    zero_refused = False
    for _ in range(rounds):
        for k in accounts:
            register_stake(pool, tokens, k.public_key)
        try:
            register_stake(pool, tokens, zero)
        except NothingToStake:
            zero_refused = True
        pool.entries[zero] = 0  # present with nothing staked
        counts[select_validator(pool)] += 1
        end_round(pool, tokens)
    observed = np.array([counts[k.public_key] for k in accounts])
    expected = np.array([0.1, 0.2, 0.3, 0.4]) * rounds
    freqs = observed / rounds
    worst = float(np.max(np.abs(freqs - expected / rounds)))
    p = float(stats.chisquare(observed, expected).pvalue)
    ok = worst <= 0.02 and p > 0.01 and counts[zero] == 0 and zero_refused
    shares = "/".join(f"{f:.3f}" for f in freqs)
    return ok, f"shares {shares}; max dev {worst * 100:.2f}pp; chi2 p={p:.3f}; zero-stake picks {counts[zero]}"


# -- 3 ------------------------------------------------------------------------------


def _cheat_payload(i: int, chunk_bytes: int = 1024):
    owner = KeyPair.from_seed(f"acc3/owner-{i}")
    seeder = KeyPair.from_seed(f"acc3/seeder-{i}")
    rng = make_rng(3, i)
    data = rng.bytes(chunk_bytes)
    return build_payload(owner, f"chunk-{i}", data, seeder.public_key, rng.bytes(16))


def storage_cheat_detection(trials: int = 200, challenges: int = 20, k: int = 2) -> tuple[bool, str]:
    firsts = []
    for i in range(trials):
        payload = _cheat_payload(i)
        com = commit_chunk(payload)
        retained = retain_prefixes(payload, com.leaf_size)
        stored = StoredPayload.from_payload(payload).discard(0.5, make_rng(3, i, 1))
        sched = schedule_challenges(make_rng(3, i, 2), com, 10, 10_000, k=k)[:challenges]
        assert len(sched) == challenges
        first = None
        for j, c in enumerate(sched, start=1):
            resp = respond(c, stored, c.issued_at)
            if verify_response(c, resp, com, retained, c.issued_at + 1) is not Verdict.PASS:
                first = j
                break
        firsts.append(first)
    detected = [f for f in firsts if f is not None]
    p = 1 - 0.5**k
    all_pass = (1 - p) ** challenges
    mean = float(np.mean(detected)) if detected else math.inf
    # geometric law: mean 1/p, variance (1-p)/p^2
    sigma = math.sqrt((1 - p) / p**2 / max(len(detected), 1))
    ok = len(detected) == trials and abs(mean - 1 / p) <= 3 * sigma
    return ok, (
        f"detected {len(detected)}/{trials}; all-pass prob {all_pass:.3g}; "
        f"first detection mean {mean:.3f} vs {1 / p:.3f} +/- {3 * sigma:.3f}"
    )


# -- 4 ------------------------------------------------------------------------------


def completeness(cfg: ScenarioConfig | None = None) -> tuple[bool, str]:
    cfg = cfg or ScenarioConfig(rng_seed=4)
    sim = Scenario(cfg)
    sim.advance(cfg.horizon_ticks)
    r, _ = sim.finish()
    resolved = r.challenges["passed"] + r.challenges["failed"]
    ok = (
        resolved >= 1000
        and r.challenges["failed"] == 0
        and not r.slashes
        and r.degraded_final == 0
        and r.assignments["degraded_events"] == 0
    )
    return ok, (
        f"{r.challenges['passed']}/{resolved} passed; slashes {len(r.slashes)}; "
        f"degraded {r.degraded_final}"
    )


# -- 5 ------------------------------------------------------------------------------


def swap_exclusion(n_chunks: int = 10, R: int = 5, per_pair: int = 5) -> tuple[bool, str]:
    tokens = TokenLedger()
    market = HostingMarket(R=R)
    owner = KeyPair.from_seed("acc5/owner")
    seeders = _keys("acc5/seeder", R)
    tokens.mint_leecher(owner.public_key, n_chunks)
    for s in seeders:
        tokens.mint_leecher(s.public_key, n_chunks)
        market.register_capacity(s.public_key, tokens, -(-n_chunks // R))
    market.submit_hosting_request(owner.public_key, tokens, [f"c{i}" for i in range(n_chunks)])
    rng = make_rng(5)
    trials = false_accepts = honest_fail = 0
    for a in market.match():
        data = rng.bytes(1024)
        stores, coms, kept = {}, {}, {}
        for s in a.seeders:
            p = build_payload(owner, a.chunk_id, data, s, rng.bytes(16))
            coms[s] = commit_chunk(p)
            kept[s] = retain_prefixes(p, coms[s].leaf_size)
            stores[s] = StoredPayload.from_payload(p)
        for target in a.seeders:
            sched = schedule_challenges(make_rng(5, trials), coms[target], 10, 10_000)[:per_pair]
            for c in sched:
                own = respond(c, stores[target], c.issued_at)
                honest_fail += verify_response(c, own, coms[target], kept[target], c.issued_at + 1) is not Verdict.PASS
                for other in a.seeders:
                    if other == target:
                        continue
                    trials += 1
                    forged = respond(c, stores[other], c.issued_at)
                    v = verify_response(c, forged, coms[target], kept[target], c.issued_at + 1)
                    false_accepts += v is Verdict.PASS
    ok = false_accepts == 0 and honest_fail == 0 and trials == n_chunks * R * (R - 1) * per_pair
    return ok, f"{false_accepts} false accepts in {trials} swapped responses; honest control failures {honest_fail}"


# -- 6 ------------------------------------------------------------------------------


def slashing(after: int = 1000) -> tuple[bool, str]:
    base = ScenarioConfig(rng_seed=6, mean_interval=200, horizon_ticks=(after + 60) * 10)
    cfg = inject_adversary(base, "validator-0", "equivocator")
    sim = Scenario(cfg)
    sim.advance(cfg.horizon_ticks)
    sim.finish()
    bad = sim.keys["validator-0"].public_key
    slash_at = next((i for i, o in enumerate(sim.outcomes) if bad in o.slashed), None)
    if slash_at is None:
        return False, "equivocator never slashed"
    later = sim.outcomes[slash_at + 1 :]
    reappears = sum(o.selected == bad for o in later)
    left = sim.tokens.seed_bonus_of(bad)
    # burn log against running counters and the slash event
    by_kind: dict[str, int] = {}
    slash_burn = 0
    for e in sim.tokens.burn_log:
        by_kind[e.kind] = by_kind.get(e.kind, 0) + e.amount
        if e.reason == "slash" and e.account == bad:
            slash_burn += e.amount
    counters = {k: v for k, v in sim.tokens.burned.items() if v}
    event_burn = sum(e["burned"] for e in sim.log if e["kind"] == "slash")
    reconciles = by_kind == counters and slash_burn == event_burn == cfg.validator_stake
    ok = left == 0 and len(later) >= after and reappears == 0 and reconciles
    return ok, (
        f"seed bonus left {left}; selected {reappears} times in {len(later)} later rounds; "
        f"slash burned {slash_burn}; burn log reconciles {reconciles}"
    )


# -- 7 ------------------------------------------------------------------------------


def random_config(seed: int) -> ScenarioConfig:
    rng = make_rng(7, seed)
    cfg = ScenarioConfig(
        rng_seed=seed,
        n_owners=int(rng.integers(1, 5)),
        n_seeders=int(rng.integers(5, 11)),
        n_validators=int(rng.integers(1, 5)),
        chunks_per_owner=int(rng.integers(1, 6)),
        seeder_tokens=int(rng.integers(1, 4)),
        gamma=float(rng.choice([0.05, 0.1, 0.25, 0.5])),
        mean_interval=int(rng.integers(20, 120)),
        hosting_term=int(rng.choice([0, 400, 900])),
        refund_on_expiry=bool(rng.integers(2)),
        delay={"model": "uniform", "low": 0, "high": int(rng.integers(1, 6))},
        horizon_ticks=1500,
    )
    if rng.integers(2):
        cfg = inject_adversary(cfg, "seeder-1", f"discard_fraction:{float(rng.choice([0.25, 0.5, 0.75]))}")
    if rng.integers(2):
        cfg = inject_adversary(cfg, "seeder-2", f"offline_after:{int(rng.integers(100, 1000))}")
    if rng.integers(2):
        cfg = inject_adversary(cfg, "seeder-3", "payload_swapper")
    if rng.integers(2):
        cfg = inject_adversary(cfg, "validator-0", "equivocator")
    return cfg


def _conservation(sim: Scenario) -> list[str]:
    """Each law checked from live state, independent of the event log."""
    bad = []
    blocks = sim.chain.branch()
    allocated = sum(o.amount for tx in blocks[0].transactions for o in tx.outputs)
    burns = sum(o.amount for b in blocks[1:] for tx in b.transactions for o in tx.outputs if o.recipient == BURN_KEY)
    if sim.chain.supply() != allocated + (len(blocks) - 1) * sim.cfg.block_reward - burns:
        bad.append("td")
    t = sim.tokens
    if t.minted["leecher"] - t.burned["leecher"] != sum(t.leecher.values()) + sim.market.total_escrow():
        bad.append("leecher")
    passes = sum(cp.passes for cp in sim.checkpoints)
    if t.total("seed_bonus") != t.minted["seed_bonus"] - t.burned["seed_bonus"]:
        bad.append("seed_bonus")
    awarded = sum(e.amount for e in t.mint_log if e.kind == "seed_bonus" and e.reason == "checkpoint")
    if awarded != passes * sim.cfg.bonus_per_pass:
        bad.append("checkpoint")
    return bad


def conservation_audits(seeds: int = 20) -> tuple[bool, str]:
    from .cli import audit
    from .metrics import write_events

    failures = []
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(seeds):
            sim = Scenario(random_config(seed))
            sim.advance(sim.cfg.horizon_ticks)
            sim.finish()
            bad = _conservation(sim)
            path = Path(tmp) / f"events-{seed}.jsonl"
            write_events(sim.log, path)
            if audit_events(sim.log) or _quiet(audit, path) != 0:
                bad.append("audit")
            if bad:
                failures.append(f"seed {seed}: {','.join(bad)}")
    return not failures, f"{seeds - len(failures)}/{seeds} seeds clean" + (f" ({failures[0]})" if failures else "")


def _quiet(fn, *args):
    import contextlib
    import io

    with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
        return fn(*args)


# -- 8 ------------------------------------------------------------------------------


def double_spend(cases: int = 1000) -> tuple[bool, str]:
    rng = make_rng(8)
    holders = _keys("acc8/holder", 6)
    producer = KeyPair.from_seed("acc8/producer").public_key
    rejected = 0
    kinds = {"later block": 0, "same block": 0, "same tx": 0}
    for case in range(cases):
        allocs = [(int(rng.integers(1, 100)), h.public_key) for h in holders]
        chain = genesis(allocs)
        i = int(rng.integers(len(holders)))
        owner = holders[i]
        coin = chain.coins_of(owner.public_key)[0]
        amount = chain.utxo_set[coin].amount
        to_a = holders[int(rng.integers(len(holders)))].public_key
        to_b = holders[int(rng.integers(len(holders)))].public_key
        first = create_transaction(chain, [coin], [(amount, to_a)], owner, b"a%d" % case)
        second = create_transaction(chain, [coin], [(int(rng.integers(0, amount + 1)), to_b)], owner, b"b%d" % case)
        kind = ("later block", "same block", "same tx")[case % 3]
        kinds[kind] += 1
        if kind == "later block":
            chain = apply_block(chain, make_block(chain, producer, [first]))
            violation = verify_transaction(second, chain)
            try:
                apply_block(chain, make_block(chain, producer, [second]))
                via_block = None
            except InvalidTx as exc:
                via_block = exc.violation
            rejected += violation is Violation.DOUBLE_SPEND and via_block is Violation.DOUBLE_SPEND
        elif kind == "same block":
            try:
                apply_block(chain, make_block(chain, producer, [first, second]))
            except InvalidTx as exc:
                rejected += exc.index == 2 and exc.violation is Violation.DOUBLE_SPEND
            except BlockRejected:
                pass
        else:
            twice = sign_transaction([coin, coin], [TxOutput(2 * amount, to_b)], owner)
            rejected += verify_transaction(twice, chain) is Violation.DOUBLE_SPEND
    return rejected == cases, f"{rejected}/{cases} second spends rejected with DoubleSpend ({kinds})"


# -- 9 ------------------------------------------------------------------------------


def _isolation_run(mean_interval: float) -> Scenario:
    cfg = ScenarioConfig(rng_seed=9, mean_interval=mean_interval, horizon_ticks=1500)
    sim = Scenario(cfg)
    sim.advance(cfg.horizon_ticks)
    sim.finish()
    return sim


def main_chain_isolation() -> tuple[bool, str]:
    from .storage import ProofCheckpoint

    low, high = _isolation_run(60), _isolation_run(6)
    n_low = len(low.challenges)
    n_high = len(high.challenges)

    def split(sim: Scenario) -> tuple[int, int, bytes]:
        blocks = sim.chain.branch()
        raw = b"".join(b.serialize() for b in blocks)
        cp = sum(len(r.encode()) for b in blocks for r in b.checkpoint_records if isinstance(r, ProofCheckpoint))
        return len(raw) - cp, cp, raw

    rest_low, cp_low, raw_low = split(low)
    rest_high, cp_high, raw_high = split(high)

    def leaked(sim: Scenario, raw: bytes) -> int:
        needles = {cid.encode() for cid in sim.challenges}
        for resp in sim.responses.values():
            for _, leaf, path in resp.leaves:
                needles.add(leaf)
                needles.update(path)
        return sum(n in raw for n in needles)

    leaks = leaked(low, raw_low) + leaked(high, raw_high)
    ok = n_high >= 5 * n_low and rest_low == rest_high and leaks == 0
    return ok, (
        f"challenges {n_low} -> {n_high}; non-checkpoint bytes {rest_low} vs {rest_high}; "
        f"checkpoint bytes {cp_low} vs {cp_high}; challenge/response bytes on chain {leaks}"
    )


# -- 10 -----------------------------------------------------------------------------


def determinism() -> tuple[bool, str]:
    from .cli import write_outputs

    cfg = inject_adversary(
        inject_adversary(ScenarioConfig(rng_seed=10, delay={"model": "uniform", "low": 0, "high": 3}),
                         "seeder-1", "discard_fraction:0.5"),
        "validator-0", "equivocator",
    )
    outs = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in range(2):
            sim = Scenario(cfg)
            sim.advance(cfg.horizon_ticks)
            sim.finish()
            paths = write_outputs(sim, Path(tmp) / str(run), figures=False)
            outs.append((paths["metrics"].read_bytes(), paths["events"].read_bytes()))
    same = outs[0] == outs[1]

    whole = Scenario(cfg)
    whole.advance(cfg.horizon_ticks)
    whole.finish()
    halves = Scenario(cfg)
    halves.advance(cfg.horizon_ticks // 2)
    halves.advance(cfg.horizon_ticks)
    halves.finish()
    split_ok = whole.log == halves.log and whole.report() == halves.report()
    return same and split_ok, f"byte-identical reruns {same}; split-run equivalence {split_ok}"


CRITERIA = [
    (1, "capacity arithmetic", 1, capacity_arithmetic, {}),
    (2, "stake-proportional selection", 5, stake_selection, {"rounds": 2000}),
    (3, "storage-cheat detection", 10, storage_cheat_detection, {"trials": 50}),
    (4, "completeness", 10, completeness, {}),
    (5, "swap exclusion", 5, swap_exclusion, {}),
    (6, "slashing", 5, slashing, {"after": 200}),
    (7, "conservation audits", 30, conservation_audits, {"seeds": 5}),
    (8, "double-spend rejection", 5, double_spend, {"cases": 200}),
    (9, "main-chain isolation", 5, main_chain_isolation, {}),
    (10, "determinism", 10, determinism, {}),
]


def run_criterion(number: int, quick: bool = False) -> Result:
    n, name, budget, fn, small = CRITERIA[number - 1]
    return _timed(n, name, budget, (lambda: fn(**small)) if quick else fn)


def run_all(quick: bool = False) -> list[Result]:
    return [run_criterion(n, quick) for n, *_ in CRITERIA]
