"""Deterministic discrete-event simulation of the whole network.

Time is integer ticks.  Events fire in ``(fire_at, seq)`` order, where
``seq`` is the global insertion counter, so a run is a pure function of
its :class:`~tdchain.config.ScenarioConfig`.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, NamedTuple

from .config import ScenarioConfig
from .consensus import (
    RoundOutcome,
    StakePool,
    as_fraction,
    detect_equivocation,
    end_round,
    finalize_round,
    make_rng,
    register_stake,
    select_validator,
    sign_header,
    slash,
    void_round,
)
from .crypto import BURN_KEY, KeyPair, digest
from .ledger import ChainParams, InsufficientFunds, Transaction, genesis, make_block
from .market import HostingAssignment, HostingMarket, TrackerRecord, build_payload, NONCE_LEN
from .metrics import MetricsReport, build_report
from .storage import (
    ChallengeTally,
    ProofCheckpoint,
    StoredPayload,
    Verdict,
    commit_chunk,
    respond,
    retain_prefixes,
    schedule_challenges,
    settle_checkpoint,
    transcript_line,
    verify_response,
)
from .tokens import LEECHER, SEED_BONUS, ExchangeState, TokenLedger, ZeroMint, exchange_rate, prepare_td_burn

# sub-stream ids for make_rng
_POOL, _CHALLENGES, _DELAY, _DATA, _ADVERSARY, _VERIFIER = 1, 2, 3, 4, 5, 6


class InvariantViolation(RuntimeError):
    def __init__(self, invariant: str, detail: str = ""):
        super().__init__(f"{invariant} violated{': ' + detail if detail else ''}")
        self.invariant = invariant


class SimEvent(NamedTuple):
    fire_at: int
    seq: int
    kind: str
    payload: Any


class Simulator:
    """Tick clock plus a heap of :class:`SimEvent`; handlers are ``_on_<kind>`` methods."""

    def __init__(self) -> None:
        self.now = 0
        self._queue: list[SimEvent] = []
        self._seq = 0
        self.executed = 0

    def schedule(self, at: int, kind: str, payload: Any = None) -> int:
        if at < self.now:
            raise ValueError(f"cannot schedule {kind} at {at}, clock is {self.now}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, SimEvent(at, seq, kind, payload))
        return seq

    def advance(self, until: int) -> "Simulator":
        """Run every event with ``fire_at <= until``; the clock ends at ``until``."""
        if until < self.now:
            raise ValueError(f"cannot advance backwards from {self.now} to {until}")
        while self._queue and self._queue[0].fire_at <= until:
            ev = heapq.heappop(self._queue)
            self.now = ev.fire_at
            getattr(self, f"_on_{ev.kind}")(ev.payload)
            self.executed += 1
        self.now = until
        return self

    def pending(self) -> int:
        return len(self._queue)


@dataclass
class _Intent:
    node: str
    tokens_wanted: int


def _pair_key(chunk_id: str, seeder: bytes) -> int:
    return int.from_bytes(digest(chunk_id.encode(), seeder)[:8], "little")


class Scenario(Simulator):
    def __init__(self, config: ScenarioConfig):
        super().__init__()
        self.cfg = cfg = config.validate()
        seed = cfg.rng_seed
        self.keys: dict[str, KeyPair] = {n: KeyPair.from_seed(f"{seed}/{n}") for n in cfg.node_names()}
        self.name_of = {k.public_key: n for n, k in self.keys.items()}
        self._delay_rng = make_rng(seed, _DELAY)
        self._data_rng = make_rng(seed, _DATA)
        self.gamma = as_fraction(cfg.gamma)
        self.log: list[dict] = []

        allocations = []
        for n in cfg.node_names():
            amount = {"owner": cfg.owner_td, "seeder": cfg.seeder_td}.get(n.split("-")[0], 0)
            if amount:
                allocations.append((amount, self.keys[n].public_key))
        self.chain = genesis(allocations, ChainParams(cfg.block_reward, cfg.max_txs))
        self.tokens = TokenLedger()
        self.market = HostingMarket(cfg.R)
        self.pool = StakePool(make_rng(seed, _POOL))
        self._token_cursor = (0, 0)

        self.intents: list[_Intent] = []
        self.pending_records: list[TrackerRecord] = []
        self.pending_checkpoints: list[ProofCheckpoint] = []
        self.settled: set[tuple[int, int]] = set()
        self.tally = ChallengeTally(0)
        self.chunk_data: dict[str, bytes] = {}
        self.commitments: dict = {}
        self.retained: dict = {}
        self.stores: dict = {}
        self.challenges: dict = {}
        self.responses: dict = {}
        self.resolved: set[str] = set()
        self.fetching: set[tuple[str, bytes]] = set()
        self.verifiers: dict[tuple[str, bytes], str] = {}
        self.transcript: list[dict] = []
        self.failures: Counter = Counter()
        self.headers: dict[int, list] = {}
        self.outcomes: list[RoundOutcome] = []
        self.blocks_bytes: list[int] = []
        self.checkpoints: list[ProofCheckpoint] = []
        self._finished = False

        # incremental metrics, cross-checked against the event log
        self.m = {
            "rounds": Counter(),
            "selections": Counter(),
            "challenges": Counter(),
            "reasons": Counter(),
            "assignments": Counter(),
            "onchain": Counter(),
            "supply": [],
            "slashes": [],
            "adversaries": {},
            "node_challenges": Counter(),
        }
        for name, b in sorted(cfg.adversaries.items()):
            self.m["adversaries"][name] = {
                "policy": b.policy,
                "param": b.param,
                "activated_at": b.param if b.policy == "offline_after" else None,
                "first_failure_tick": None,
                "challenges_to_first_failure": None,
                "detection_latency": None,
                "slashed": False,
                "dropouts": 0,
            }

        self._emit(
            "genesis",
            allocations={self.name_of[o]: a for a, o in allocations},
            block_reward=cfg.block_reward,
            bonus_per_pass=cfg.bonus_per_pass,
            adversaries={k: v.to_dict() for k, v in sorted(cfg.adversaries.items())},
            nodes={n: k.public_key.hex() for n, k in self.keys.items()},
        )
        for n in cfg.node_names():
            if n.startswith("validator") and cfg.validator_stake:
                self.tokens.award_seed_bonus(self.keys[n].public_key, cfg.validator_stake, 0, "genesis")
        for n in cfg.node_names():
            kind = n.split("-")[0]
            if kind == "owner" and cfg.chunks_per_owner:
                self.intents.append(_Intent(n, cfg.chunks_per_owner))
            elif kind == "seeder" and cfg.seeder_tokens:
                self.intents.append(_Intent(n, cfg.seeder_tokens))
        self._flush_tokens()
        if cfg.horizon_ticks >= cfg.block_interval:
            self.schedule(cfg.block_interval, "block")
        if cfg.horizon_ticks >= cfg.checkpoint_interval:
            self.schedule(cfg.checkpoint_interval, "checkpoint")

    # -- helpers -------------------------------------------------------------

    def _emit(self, kind: str, **fields) -> None:
        self.log.append({"i": len(self.log), "tick": self.now, "kind": kind, **fields})

    def _delay(self) -> int:
        d = self.cfg.delay
        if d["model"] == "fixed":
            return d["ticks"]
        return int(self._delay_rng.integers(d["low"], d["high"] + 1))

    def _offline(self, name: str, t: int) -> bool:
        b = self.cfg.behavior_of(name)
        return b.policy == "offline_after" and t >= b.param

    def _flush_tokens(self) -> None:
        mi, bi = self._token_cursor
        for e in self.tokens.mint_log[mi:]:
            self._emit("mint", token=e.kind, node=self.name_of.get(e.account, e.account.hex()),
                       amount=e.amount, reason=e.reason)
        for e in self.tokens.burn_log[bi:]:
            self._emit("burn", token=e.kind, node=self.name_of.get(e.account, e.account.hex()),
                       amount=e.amount, reason=e.reason)
        self._token_cursor = (len(self.tokens.mint_log), len(self.tokens.burn_log))

    def exchange_state(self) -> ExchangeState:
        return ExchangeState(
            self.market.pending_demand_mb, self.market.available_capacity_mb, as_fraction(self.cfg.base_rate)
        )

    def _active(self, chunk_id: str, seeder: bytes) -> bool:
        a = self.market.assignments.get(chunk_id)
        return a is not None and seeder in a.seeders

    # -- consensus round -------------------------------------------------------

    def _on_block(self, _payload) -> None:
        t = self.now
        cfg = self.cfg
        for name in cfg.node_names():
            if cfg.role_of(name) not in ("validator", "hybrid") or self._offline(name, t):
                continue
            pub = self.keys[name].public_key
            if self.tokens.seed_bonus.get(pub, 0) > 0 and pub not in self.pool.entries and pub not in self.pool.barred:
                register_stake(self.pool, self.tokens, pub)

        if self.pool.total() == 0:
            self.m["rounds"]["empty"] += 1
            self._emit("round", round=self.pool.round, selected=None, status="empty")
        else:
            winner = select_validator(self.pool)
            wname = self.name_of[winner]
            self.m["selections"][wname] += 1
            policy = cfg.behavior_of(wname).policy
            adv = self.m["adversaries"].get(wname)
            if policy == "equivocator" and adv is not None and adv["activated_at"] is None:
                adv["activated_at"] = t
            if self._offline(wname, t):
                self._record_outcome(void_round(self.pool, self.tokens, winner, "offline", t))
            elif policy == "equivocator":
                self._equivocate(winner, t)
            else:
                self._honest_block(winner, t)

        end_round(self.pool, self.tokens, t)
        self._market_step(t)
        self._flush_tokens()
        self._check_invariants()
        self._snapshot()
        if t + cfg.block_interval <= cfg.horizon_ticks:
            self.schedule(t + cfg.block_interval, "block")

    def _assemble(self, winner: bytes, t: int) -> tuple:
        """Pending burns and records into a block; nothing is credited yet."""
        rate = exchange_rate(self.exchange_state())
        txs: list[Transaction] = []
        included: list[tuple[_Intent, int, int]] = []
        used: set = set()
        keep: list[_Intent] = []
        for intent in self.intents:
            if len(txs) + 1 >= self.cfg.max_txs:
                keep.append(intent)
                continue
            td = math.ceil(intent.tokens_wanted * rate)
            try:
                tx, minted = prepare_td_burn(self.chain, self.keys[intent.node], td, rate, used)
            except (InsufficientFunds, ZeroMint) as exc:
                self._emit("intent_dropped", node=intent.node, reason=type(exc).__name__)
                continue
            used.update(i.locator for i in tx.inputs)
            txs.append(tx)
            included.append((intent, td, minted))
        records = [*self.pending_records, *self.pending_checkpoints]
        block = make_block(self.chain, winner, txs, records, timestamp=t)
        return block, included, keep

    def _honest_block(self, winner: bytes, t: int) -> None:
        block, included, keep = self._assemble(winner, t)
        self.headers.setdefault(block.height, []).append(sign_header(self.keys[self.name_of[winner]], block.header))
        outcome, chain = finalize_round(self.pool, self.tokens, self.chain, winner, block, self.gamma, t)
        self._record_outcome(outcome)
        if outcome.block is None:
            return
        self.chain = chain
        self.intents = keep
        self.pending_records = []
        self.pending_checkpoints = []
        size = len(block.serialize())
        cp_bytes = sum(len(r.encode()) for r in block.checkpoint_records if isinstance(r, ProofCheckpoint))
        tr_bytes = sum(len(r.encode()) for r in block.checkpoint_records if isinstance(r, TrackerRecord))
        self.blocks_bytes.append(size)
        self.m["onchain"]["bytes"] += size
        self.m["onchain"]["checkpoint_bytes"] += cp_bytes
        self.m["onchain"]["tracker_bytes"] += tr_bytes
        td_burned = sum(o.amount for tx in block.transactions[1:] for o in tx.outputs if o.recipient == BURN_KEY)
        self._emit(
            "block", height=block.height, hash=block.block_hash.hex(), validator=self.name_of[winner],
            reward=self.chain.params.block_reward, td_burned=td_burned,
            fees=self.chain.meta[block.block_hash].destroyed - self.chain.meta[block.prev_hash].destroyed - td_burned,
            txs=len(block.transactions), bytes=size, checkpoint_bytes=cp_bytes, tracker_bytes=tr_bytes,
        )
        credited = []
        for intent, td, minted in included:
            pub = self.keys[intent.node].public_key
            self.tokens.mint_leecher(pub, minted, t)
            self.tokens.record_td_burn(pub, td, t)
            credited.append(intent.node)
        for rec in block.checkpoint_records:
            if isinstance(rec, TrackerRecord):
                self._emit("tracker", chunk=rec.chunk_id, seeders=[self.name_of[s] for s, _ in rec.entries])
                for seeder, _root in rec.entries:
                    # a refill republishes the whole set; only newcomers fetch
                    if (rec.chunk_id, seeder) in self.fetching:
                        continue
                    self.fetching.add((rec.chunk_id, seeder))
                    self.schedule(t + self._delay(), "download", (rec.chunk_id, seeder))
        for rec in block.checkpoint_records:
            if isinstance(rec, ProofCheckpoint):
                posted = settle_checkpoint(
                    rec, self.tokens, self.settled, block.block_hash, self.cfg.bonus_per_pass, t, self._on_failure
                )
                self.checkpoints.append(posted)
                self._emit(
                    "checkpoint", window=[rec.from_tick, rec.to_tick], passes=rec.passes,
                    failures=rec.failures, bonus_per_pass=self.cfg.bonus_per_pass, block=block.block_hash.hex(),
                )
        for node in credited:
            self._enter_market(node, t)

    def _equivocate(self, winner: bytes, t: int) -> None:
        key = self.keys[self.name_of[winner]]
        a, _, _ = self._assemble(winner, t)
        # a later timestamp keeps the twin distinct even when both carry no txs
        b = make_block(self.chain, winner, (), a.checkpoint_records, timestamp=t + 1)
        seen = self.headers.setdefault(a.height, [])
        seen.extend([sign_header(key, a.header), sign_header(key, b.header)])
        offenders = detect_equivocation(seen)
        for off in offenders:
            if off in self.pool.barred:
                continue
            burned = slash(self.pool, self.tokens, off, t)
            name = self.name_of[off]
            self.m["slashes"].append(name)
            adv = self.m["adversaries"].get(name)
            if adv is not None:
                adv["slashed"] = True
                if adv["first_failure_tick"] is None:
                    adv["first_failure_tick"] = t
                    if adv["activated_at"] is not None:
                        adv["detection_latency"] = t - adv["activated_at"]
            self._emit("slash", node=name, burned=burned, height=a.height)
        self._record_outcome(
            RoundOutcome(self.pool.round, winner, None, 0, 0, tuple(offenders), voided="equivocation")
        )

    def _record_outcome(self, outcome: RoundOutcome) -> None:
        self.outcomes.append(outcome)
        status = "voided" if outcome.block is None else "ok"
        self.m["rounds"]["voided" if status == "voided" else "blocks"] += 1
        self._emit(
            "round", round=outcome.round, selected=self.name_of[outcome.selected], status=status,
            burned=outcome.burned, returned=outcome.returned,
            slashed=[self.name_of[s] for s in outcome.slashed], voided=outcome.voided,
        )

    # -- market -----------------------------------------------------------------

    def _enter_market(self, node: str, t: int) -> None:
        pub = self.keys[node].public_key
        if node.startswith("owner"):
            n = self.cfg.chunks_per_owner
            chunks = [f"{node}/c{j}" for j in range(n)]
            req = self.market.submit_hosting_request(pub, self.tokens, chunks, t)
            for c in chunks:
                self.chunk_data[c] = self._data_rng.bytes(self.cfg.chunk_bytes)
            self._emit("escrow", node=node, amount=n, purpose="request", request=req.request_id)
            if self.cfg.hosting_term and t + self.cfg.hosting_term <= self.cfg.horizon_ticks:
                self.schedule(t + self.cfg.hosting_term, "expire", req.request_id)
        else:
            n = self.tokens.leecher.get(pub, 0)
            if n > 0:
                cap = self.market.register_capacity(pub, self.tokens, n)
                self._emit("escrow", node=node, amount=n, purpose="capacity", capacity_blocks=cap.capacity_blocks)

    def _market_step(self, t: int) -> None:
        for a in self.market.match():
            if not a.degraded:
                self.m["assignments"]["matched"] += 1
            self._emit("assignment", chunk=a.chunk_id, seeders=[self.name_of[s] for s in a.seeders],
                       degraded=a.degraded)
            self._distribute(a)

    def _distribute(self, a: HostingAssignment) -> None:
        owner = self.keys[self.name_of[a.owner]]
        for s in a.seeders:
            if s in a.payload_commitments:
                continue
            nonce = self._data_rng.bytes(NONCE_LEN)
            payload = build_payload(owner, a.chunk_id, self.chunk_data[a.chunk_id], s, nonce)
            com = commit_chunk(payload, self.cfg.leaf_size)
            self.commitments[(a.chunk_id, s)] = com
            self.retained[(a.chunk_id, s)] = retain_prefixes(payload, self.cfg.leaf_size, self.cfg.liveness_len)
            self.market.post_payload(payload, com.merkle_root)
        if a.seeders and all(s in a.payload_commitments for s in a.seeders) and not a.tracker_published:
            self.pending_records.append(self.market.publish_tracker(a))

    def _on_expire(self, request_id: int) -> None:
        req = self.market.requests[request_id]
        n = self.market.expire_request(request_id, self.tokens, self.now, self.cfg.refund_on_expiry)
        self._emit("expire", node=self.name_of[req.owner], request=request_id, amount=n,
                   refunded=self.cfg.refund_on_expiry, chunks=list(req.chunk_ids))
        self._flush_tokens()

    # -- storage sessions -----------------------------------------------------

    def _on_download(self, payload) -> None:
        chunk_id, seeder = payload
        t = self.now
        name = self.name_of[seeder]
        if self._offline(name, t) or not self._active(chunk_id, seeder):
            return
        p = self.market.fetch_payload(chunk_id, seeder)
        if p is None:
            return
        b = self.cfg.behavior_of(name)
        stored: StoredPayload | None = StoredPayload.from_payload(p, self.cfg.leaf_size)
        if b.policy == "discard_fraction":
            stored = stored.discard(b.param, make_rng(self.cfg.rng_seed, _ADVERSARY, _pair_key(chunk_id, seeder)))
        elif b.policy == "payload_swapper":
            # colluding peer hands over its own copy
            a = self.market.assignments[chunk_id]
            peers = sorted(s for s in a.seeders if s != seeder and (chunk_id, s) in self.market.payloads)
            stored = (
                StoredPayload.from_payload(self.market.payloads[(chunk_id, peers[0])], self.cfg.leaf_size)
                if peers else None
            )
        self.stores[(seeder, chunk_id)] = stored
        adv = self.m["adversaries"].get(name)
        if adv is not None and adv["activated_at"] is None and b.policy in ("discard_fraction", "payload_swapper"):
            adv["activated_at"] = t
        self._emit("stored", node=name, chunk=chunk_id)
        self.schedule(t + self._delay(), "stored_ack", (chunk_id, seeder))

    def _on_stored_ack(self, payload) -> None:
        chunk_id, seeder = payload
        t = self.now
        if not self._active(chunk_id, seeder):
            return
        com = self.commitments[(chunk_id, seeder)]
        self.verifiers[(chunk_id, seeder)] = self._pick_verifier(chunk_id, seeder)
        rng = make_rng(self.cfg.rng_seed, _CHALLENGES, _pair_key(chunk_id, seeder))
        for c in schedule_challenges(
            rng, com, self.cfg.mean_interval, self.cfg.horizon_ticks - t, self.cfg.k, self.cfg.W, start=t
        ):
            self.challenges[c.challenge_id] = c
            self.schedule(c.issued_at, "challenge", c.challenge_id)

    def _pick_verifier(self, chunk_id: str, seeder: bytes) -> str:
        owner = self.name_of[self.market.assignments[chunk_id].owner]
        if self.cfg.verifier == "owner":
            return owner
        staked = [
            n for n in self.cfg.node_names()
            if n != self.name_of[seeder]
            and self.keys[n].public_key not in self.pool.barred
            and self.tokens.seed_bonus_of(self.keys[n].public_key) > 0
        ]
        if not staked:
            return owner
        rng = make_rng(self.cfg.rng_seed, _VERIFIER, _pair_key(chunk_id, seeder))
        return staked[int(rng.integers(len(staked)))]

    def _on_challenge(self, cid: str) -> None:
        c = self.challenges[cid]
        if not self._active(c.chunk_id, c.seeder):
            return
        self.m["challenges"]["issued"] += 1
        self._emit("challenge_issued", id=cid, node=self.name_of[c.seeder], chunk=c.chunk_id,
                   verifier=self.verifiers[(c.chunk_id, c.seeder)])
        self.schedule(self.now + self._delay(), "deliver", cid)
        self.schedule(c.deadline + 1, "timeout", cid)

    def _on_deliver(self, cid: str) -> None:
        c = self.challenges[cid]
        t = self.now
        if self._offline(self.name_of[c.seeder], t):
            return
        resp = respond(c, self.stores.get((c.seeder, c.chunk_id)), t, self.cfg.response_latency, self.cfg.liveness_len)
        if resp is not None:
            self.schedule(resp.responded_at + self._delay(), "arrival", (cid, resp))

    def _on_arrival(self, payload) -> None:
        cid, resp = payload
        if cid in self.resolved:
            return
        c = self.challenges[cid]
        key = (c.chunk_id, c.seeder)
        self.responses[cid] = resp
        self._resolve(c, verify_response(c, resp, self.commitments[key], self.retained[key], self.now))

    def _on_timeout(self, cid: str) -> None:
        if cid not in self.resolved:
            self._resolve(self.challenges[cid], Verdict.LATE)

    def _resolve(self, c, verdict: Verdict) -> None:
        self.resolved.add(c.challenge_id)
        self.transcript.append(transcript_line(c, self.responses.get(c.challenge_id), verdict, self.now))
        self.tally.record(c.seeder, c.chunk_id, verdict)
        name = self.name_of[c.seeder]
        self.m["node_challenges"][name] += 1
        if verdict is Verdict.PASS:
            self.m["challenges"]["passed"] += 1
        else:
            self.m["challenges"]["failed"] += 1
            self.m["reasons"][verdict.value] += 1
            adv = self.m["adversaries"].get(name)
            if adv is not None and adv["first_failure_tick"] is None:
                adv["first_failure_tick"] = self.now
                adv["challenges_to_first_failure"] = self.m["node_challenges"][name]
                if adv["activated_at"] is not None:
                    adv["detection_latency"] = self.now - adv["activated_at"]
        self._emit("challenge", id=c.challenge_id, node=name, chunk=c.chunk_id, verdict=verdict.value,
                   issued_at=c.issued_at)

    def _on_checkpoint(self, _payload) -> None:
        t = self.now
        cp = self.tally.close(t)
        self.tally = ChallengeTally(t)
        if cp.results:
            self.pending_checkpoints.append(cp)
        self._emit("window", window=[cp.from_tick, cp.to_tick], passes=cp.passes, failures=cp.failures)
        if t + self.cfg.checkpoint_interval <= self.cfg.horizon_ticks:
            self.schedule(t + self.cfg.checkpoint_interval, "checkpoint")

    def _on_failure(self, seeder: bytes, chunk_id: str) -> None:
        self.failures[(chunk_id, seeder)] += 1
        if self.failures[(chunk_id, seeder)] < self.cfg.failure_grace or not self._active(chunk_id, seeder):
            return
        a = self.market.assignments[chunk_id]
        self.market.handle_dropout(a, seeder, self.tokens, self.now)
        name = self.name_of[seeder]
        self.m["assignments"]["dropouts"] += 1
        if name in self.m["adversaries"]:
            self.m["adversaries"][name]["dropouts"] += 1
        if a.degraded:
            self.m["assignments"]["degraded_events"] += 1
        self._emit("dropout", node=name, chunk=chunk_id, seeders=[self.name_of[s] for s in a.seeders],
                   degraded=a.degraded)
        self._distribute(a)

    # -- audits ------------------------------------------------------------------

    def conservation(self) -> dict[str, bool]:
        meta = self.chain.meta[self.chain.tip]
        tk = self.tokens
        checkpoint_minted = sum(e.amount for e in tk.mint_log if e.kind == SEED_BONUS and e.reason == "checkpoint")
        return {
            "td": self.chain.supply() == meta.minted - meta.destroyed,
            "leecher": tk.minted[LEECHER] - tk.burned[LEECHER] == tk.total(LEECHER) + self.market.total_escrow()
            and self.market.escrow_balanced(),
            "seed_bonus": tk.minted[SEED_BONUS] - tk.burned[SEED_BONUS] == tk.total(SEED_BONUS),
            "checkpoint": checkpoint_minted == sum(c.passes for c in self.checkpoints) * self.cfg.bonus_per_pass,
        }

    def _check_invariants(self) -> None:
        for name, ok in self.conservation().items():
            if not ok:
                raise InvariantViolation(f"{name} conservation", f"tick {self.now}")

    def _snapshot(self) -> None:
        meta = self.chain.meta[self.chain.tip]
        row = {
            "tick": self.now,
            "height": meta.height,
            "td": self.chain.supply(),
            "td_minted": meta.minted,
            "td_destroyed": meta.destroyed,
            "leecher": self.tokens.total(LEECHER),
            "leecher_escrow": self.market.total_escrow(),
            "seed_bonus": self.tokens.total(SEED_BONUS),
        }
        self.m["supply"].append(row)
        self._emit("snapshot", **{k: v for k, v in row.items() if k != "tick"})

    # -- driving -------------------------------------------------------------------

    def finish(self) -> tuple[MetricsReport, list[dict]]:
        """Close the run: final audit snapshot and the report."""
        if not self._finished:
            self._flush_tokens()
            self._check_invariants()
            self._snapshot()
            self._emit("end", executed=self.executed, pending=self.pending())
            self._finished = True
        return self.report(), self.log

    def report(self) -> MetricsReport:
        m = self.m
        tk = self.tokens
        meta = self.chain.meta[self.chain.tip]
        return build_report(
            chain_length=self.chain.height,
            rounds=dict(m["rounds"]),
            selections=dict(m["selections"]),
            supply=list(m["supply"]),
            challenges=dict(m["challenges"]),
            reasons=dict(m["reasons"]),
            adversaries=m["adversaries"],
            assignments=dict(m["assignments"]),
            degraded_final=sum(1 for a in self.market.assignments.values() if a.degraded),
            slashes=list(m["slashes"]),
            totals={
                "td_supply": self.chain.supply(),
                "td_burned": meta.burned,
                "leecher_minted": tk.minted[LEECHER],
                "leecher_burned": tk.burned[LEECHER],
                "leecher_escrow": self.market.total_escrow(),
                "seed_bonus_minted": tk.minted[SEED_BONUS],
                "seed_bonus_burned": tk.burned[SEED_BONUS],
                "checkpoint_passes": sum(c.passes for c in self.checkpoints),
                "checkpoint_failures": sum(c.failures for c in self.checkpoints),
            },
            onchain=dict(m["onchain"]),
            conservation=self.conservation(),
        )


def run_scenario(config: ScenarioConfig) -> tuple[MetricsReport, list[dict]]:
    sim = Scenario(config)
    sim.advance(config.horizon_ticks)
    return sim.finish()


def advance(sim: Simulator, until: int) -> Simulator:
    return sim.advance(until)
