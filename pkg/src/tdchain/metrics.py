"""Run reports and the event-log audit.

The simulator keeps its own counters while it runs; :func:`report_from_events`
rebuilds the same report from nothing but the event log, and
:func:`audit_events` re-derives every conservation law from the log.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

ROUND_KEYS = ("blocks", "empty", "voided")
CHALLENGE_KEYS = ("issued", "passed", "failed")
REASONS = ("Late", "BadPath", "BadLiveness", "WrongIndices")
ASSIGNMENT_KEYS = ("matched", "dropouts", "degraded_events")
ONCHAIN_KEYS = ("bytes", "checkpoint_bytes", "tracker_bytes")
CONSERVATION_KEYS = ("td", "leecher", "seed_bonus", "checkpoint")


@dataclass
class MetricsReport:
    chain_length: int = 0
    rounds: dict = field(default_factory=dict)
    selections: dict = field(default_factory=dict)
    supply: list = field(default_factory=list)
    challenges: dict = field(default_factory=dict)
    reasons: dict = field(default_factory=dict)
    adversaries: dict = field(default_factory=dict)
    assignments: dict = field(default_factory=dict)
    degraded_final: int = 0
    slashes: list = field(default_factory=list)
    totals: dict = field(default_factory=dict)
    onchain: dict = field(default_factory=dict)
    conservation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        # no wall-clock fields: equal configs must give equal bytes
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def selection_frequencies(self) -> dict[str, float]:
        total = sum(self.selections.values())
        return {k: v / total for k, v in sorted(self.selections.items())} if total else {}


def _fill(d: dict, keys: Iterable[str]) -> dict:
    return {k: int(d.get(k, 0)) for k in keys}


def build_report(**kw) -> MetricsReport:
    kw["rounds"] = _fill(kw.get("rounds", {}), ROUND_KEYS)
    kw["challenges"] = _fill(kw.get("challenges", {}), CHALLENGE_KEYS)
    kw["reasons"] = _fill(kw.get("reasons", {}), REASONS)
    kw["assignments"] = _fill(kw.get("assignments", {}), ASSIGNMENT_KEYS)
    kw["onchain"] = _fill(kw.get("onchain", {}), ONCHAIN_KEYS)
    kw["selections"] = dict(sorted(kw.get("selections", {}).items()))
    kw["adversaries"] = {k: dict(v) for k, v in sorted(kw.get("adversaries", {}).items())}
    kw["conservation"] = {k: bool(kw.get("conservation", {}).get(k, False)) for k in CONSERVATION_KEYS}
    return MetricsReport(**kw)


# -- event-log IO ----------------------------------------------------------------


def write_events(events: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in events:
            f.write(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n")


def read_events(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def events_csv(events: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "tick", "kind", "data"])
    for e in events:
        rest = {k: v for k, v in e.items() if k not in ("i", "tick", "kind")}
        w.writerow([e.get("i"), e["tick"], e["kind"], json.dumps(rest, sort_keys=True)])
    return buf.getvalue()


# -- audit ------------------------------------------------------------------------


class _Books:
    """Running totals folded from the log."""

    def __init__(self) -> None:
        self.td_minted = 0
        self.td_destroyed = 0
        self.minted = {"leecher": 0, "seed_bonus": 0}
        self.burned = {"leecher": 0, "seed_bonus": 0}
        self.escrow = 0
        self.checkpoint_awards = 0
        self.checkpoint_due = 0

    def fold(self, e: dict) -> None:
        kind = e["kind"]
        if kind == "genesis":
            self.td_minted += sum(e["allocations"].values())
        elif kind == "block":
            self.td_minted += e["reward"]
            self.td_destroyed += e["td_burned"] + e["fees"]
        elif kind == "mint" and e["token"] in self.minted:
            self.minted[e["token"]] += e["amount"]
            if e["token"] == "seed_bonus" and e["reason"] == "checkpoint":
                self.checkpoint_awards += e["amount"]
        elif kind == "burn" and e["token"] in self.burned:
            self.burned[e["token"]] += e["amount"]
            if e["token"] == "leecher":
                self.escrow -= e["amount"]
        elif kind == "escrow":
            self.escrow += e["amount"]
        elif kind == "expire" and e.get("refunded"):
            self.escrow -= e["amount"]
        elif kind == "checkpoint":
            self.checkpoint_due += e["passes"] * e["bonus_per_pass"]

    def check(self, snap: dict) -> list[str]:
        bad = []
        if not (
            snap["td_minted"] == self.td_minted
            and snap["td_destroyed"] == self.td_destroyed
            and snap["td"] == self.td_minted - self.td_destroyed
        ):
            bad.append("td conservation")
        if not (
            self.minted["leecher"] - self.burned["leecher"] == snap["leecher"] + snap["leecher_escrow"]
            and self.escrow == snap["leecher_escrow"]
        ):
            bad.append("leecher conservation")
        if self.minted["seed_bonus"] - self.burned["seed_bonus"] != snap["seed_bonus"]:
            bad.append("seed_bonus conservation")
        if self.checkpoint_awards != self.checkpoint_due:
            bad.append("checkpoint conservation")
        return bad


def audit_events(events: Iterable[dict]) -> list[str]:
    """Names of violated invariants, in first-seen order; empty when the log is clean."""
    books = _Books()
    seen: list[str] = []
    snaps = 0
    for e in events:
        books.fold(e)
        if e["kind"] == "snapshot":
            snaps += 1
            for name in books.check(e):
                if name not in seen:
                    seen.append(name)
    if snaps == 0:
        seen.append("missing snapshot")
    return seen


# -- report recomputation --------------------------------------------------------------


def report_from_events(events: list[dict]) -> MetricsReport:
    rounds: dict = {}
    selections: dict = {}
    supply = []
    challenges: dict = {}
    reasons: dict = {}
    assignments: dict = {}
    onchain: dict = {}
    slashes = []
    adversaries: dict = {}
    node_challenges: dict = {}
    chunk_degraded: dict = {}
    totals = {
        "td_supply": 0, "td_burned": 0, "leecher_minted": 0, "leecher_burned": 0, "leecher_escrow": 0,
        "seed_bonus_minted": 0, "seed_bonus_burned": 0, "checkpoint_passes": 0, "checkpoint_failures": 0,
    }
    chain_length = 0

    def bump(d: dict, k: str, n: int = 1) -> None:
        d[k] = d.get(k, 0) + n

    def detect(name: str, tick: int) -> dict | None:
        adv = adversaries.get(name)
        if adv is None or adv["first_failure_tick"] is not None:
            return None
        adv["first_failure_tick"] = tick
        if adv["activated_at"] is not None:
            adv["detection_latency"] = tick - adv["activated_at"]
        return adv

    for e in events:
        kind, t = e["kind"], e["tick"]
        if kind == "genesis":
            for name, b in e["adversaries"].items():
                adversaries[name] = {
                    "policy": b["policy"],
                    "param": b["param"],
                    "activated_at": b["param"] if b["policy"] == "offline_after" else None,
                    "first_failure_tick": None,
                    "challenges_to_first_failure": None,
                    "detection_latency": None,
                    "slashed": False,
                    "dropouts": 0,
                }
        elif kind == "round":
            bump(rounds, {"ok": "blocks", "empty": "empty", "voided": "voided"}[e["status"]])
            sel = e["selected"]
            if sel is not None:
                bump(selections, sel)
            adv = adversaries.get(sel)
            if adv is not None and adv["policy"] == "equivocator" and adv["activated_at"] is None:
                adv["activated_at"] = t
        elif kind == "challenge_issued":
            bump(challenges, "issued")
        elif kind == "challenge":
            name = e["node"]
            bump(node_challenges, name)
            if e["verdict"] == "pass":
                bump(challenges, "passed")
            else:
                bump(challenges, "failed")
                bump(reasons, e["verdict"])
                adv = detect(name, t)
                if adv is not None:
                    adv["challenges_to_first_failure"] = node_challenges[name]
        elif kind == "stored":
            adv = adversaries.get(e["node"])
            if adv is not None and adv["activated_at"] is None and adv["policy"] in ("discard_fraction", "payload_swapper"):
                adv["activated_at"] = t
        elif kind == "slash":
            slashes.append(e["node"])
            adv = adversaries.get(e["node"])
            # the slash line precedes its round line
            if adv is not None and adv["policy"] == "equivocator" and adv["activated_at"] is None:
                adv["activated_at"] = t
            detect(e["node"], t)
            if e["node"] in adversaries:
                adversaries[e["node"]]["slashed"] = True
        elif kind == "assignment":
            if not e["degraded"]:
                bump(assignments, "matched")
            chunk_degraded[e["chunk"]] = e["degraded"]
        elif kind == "dropout":
            bump(assignments, "dropouts")
            if e["degraded"]:
                bump(assignments, "degraded_events")
            if e["node"] in adversaries:
                adversaries[e["node"]]["dropouts"] += 1
            chunk_degraded[e["chunk"]] = e["degraded"]
        elif kind == "expire":
            for c in e.get("chunks", []):
                chunk_degraded.pop(c, None)
        elif kind == "block":
            totals["td_burned"] += e["td_burned"]
            bump(onchain, "bytes", e["bytes"])
            bump(onchain, "checkpoint_bytes", e["checkpoint_bytes"])
            bump(onchain, "tracker_bytes", e["tracker_bytes"])
        elif kind == "mint" and e["token"] in ("leecher", "seed_bonus"):
            totals[f"{e['token']}_minted"] += e["amount"]
        elif kind == "burn" and e["token"] in ("leecher", "seed_bonus"):
            totals[f"{e['token']}_burned"] += e["amount"]
        elif kind == "checkpoint":
            totals["checkpoint_passes"] += e["passes"]
            totals["checkpoint_failures"] += e["failures"]
        elif kind == "snapshot":
            row = {k: e[k] for k in ("height", "td", "td_minted", "td_destroyed", "leecher", "leecher_escrow", "seed_bonus")}
            supply.append({"tick": t, **row})
            chain_length = e["height"]
            totals["td_supply"] = e["td"]
            totals["leecher_escrow"] = e["leecher_escrow"]

    violations = audit_events(events)
    return build_report(
        chain_length=chain_length,
        rounds=rounds,
        selections=selections,
        supply=supply,
        challenges=challenges,
        reasons=reasons,
        adversaries=adversaries,
        assignments=assignments,
        degraded_final=sum(1 for v in chunk_degraded.values() if v),
        slashes=slashes,
        totals=totals,
        onchain=onchain,
        conservation={k: f"{k} conservation" not in violations for k in CONSERVATION_KEYS},
    )
