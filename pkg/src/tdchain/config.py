"""Scenario configuration: JSON round-trip, validation, overrides, adversaries."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

from .consensus import as_fraction

POLICIES = ("honest", "offline_after", "discard_fraction", "payload_swapper", "equivocator")
ROLES = ("owner", "seeder", "validator", "hybrid")


class ConfigInvalid(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


class UnknownNode(KeyError):
    pass


@dataclass(frozen=True)
class NodeBehavior:
    policy: str = "honest"
    param: float | int | None = None

    def to_dict(self) -> dict:
        return {"policy": self.policy, "param": self.param}

    @classmethod
    def parse(cls, value: "str | dict | NodeBehavior") -> "NodeBehavior":
        """Accepts ``{"policy": ..., "param": ...}`` or ``"policy[:param]"``."""
        if isinstance(value, NodeBehavior):
            return value
        if isinstance(value, str):
            policy, _, raw = value.partition(":")
            param = json.loads(raw) if raw else None
            return cls(policy, param)
        return cls(value.get("policy", "honest"), value.get("param"))


@dataclass(frozen=True)
class ScenarioConfig:
    rng_seed: int = 0
    # population
    n_owners: int = 3
    n_seeders: int = 8
    n_validators: int = 3
    seeder_role: str = "hybrid"
    # initial holdings
    owner_td: int = 100
    seeder_td: int = 20
    validator_stake: int = 20
    # economy
    block_reward: int = 50
    max_txs: int = 256
    base_rate: int | str = 1
    gamma: float | str = 0.1
    # hosting
    R: int = 5
    chunks_per_owner: int = 4
    chunk_bytes: int = 1024
    seeder_tokens: int = 3
    hosting_term: int = 0
    refund_on_expiry: bool = False
    # storage proofs
    k: int = 2
    W: int = 10
    leaf_size: int = 64
    liveness_len: int = 32
    mean_interval: float = 50
    response_latency: int = 1
    bonus_per_pass: int = 1
    failure_grace: int = 1
    checkpoint_interval: int = 100
    verifier: str = "owner"
    # time
    horizon_ticks: int = 2000
    block_interval: int = 10
    delay: dict = field(default_factory=lambda: {"model": "fixed", "ticks": 1})
    adversaries: dict = field(default_factory=dict)

    # -- construction ---------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigInvalid(unknown[0], f"unknown config key: {unknown[0]}")
        data = dict(data)
        if "adversaries" in data:
            data["adversaries"] = {
                str(k): NodeBehavior.parse(v) for k, v in sorted(data["adversaries"].items())
            }
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigInvalid("<file>", f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigInvalid("<file>", "config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adversaries"] = {k: v.to_dict() for k, v in sorted(self.adversaries.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def with_overrides(self, overrides: Iterable[str]) -> "ScenarioConfig":
        """Apply ``key=value`` pairs; values parse as JSON, else stay strings."""
        data = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigInvalid(item, f"override must be key=value: {item!r}")
            try:
                value: Any = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            if key.startswith("adversaries."):
                data["adversaries"][key.split(".", 1)[1]] = NodeBehavior.parse(value).to_dict()
                continue
            if key not in data:
                raise ConfigInvalid(key, f"unknown config key: {key}")
            data[key] = value
        return ScenarioConfig.from_dict(data)

    # -- nodes --------------------------------------------------------------

    def node_names(self) -> list[str]:
        return (
            [f"owner-{i}" for i in range(self.n_owners)]
            + [f"seeder-{i}" for i in range(self.n_seeders)]
            + [f"validator-{i}" for i in range(self.n_validators)]
        )

    def role_of(self, name: str) -> str:
        kind = name.split("-", 1)[0]
        return self.seeder_role if kind == "seeder" else kind

    def behavior_of(self, name: str) -> NodeBehavior:
        return self.adversaries.get(name, NodeBehavior())

    # -- validation -----------------------------------------------------------

    def validate(self) -> "ScenarioConfig":
        def need(cond: bool, name: str, msg: str) -> None:
            if not cond:
                raise ConfigInvalid(name, msg)

        def is_int(v) -> bool:
            return isinstance(v, int) and not isinstance(v, bool)

        for name in (
            "rng_seed", "n_owners", "n_seeders", "n_validators", "owner_td", "seeder_td",
            "validator_stake", "block_reward", "max_txs", "R", "chunks_per_owner", "chunk_bytes",
            "seeder_tokens", "hosting_term", "k", "W", "leaf_size", "liveness_len",
            "response_latency", "bonus_per_pass", "failure_grace", "checkpoint_interval",
            "horizon_ticks", "block_interval",
        ):
            need(is_int(getattr(self, name)), name, f"{name} must be an integer")
        need(self.R >= 1, "R", "R must be ≥ 1")
        need(self.horizon_ticks >= 0, "horizon_ticks", "horizon_ticks must be ≥ 0")
        need(self.block_interval >= 1, "block_interval", "block_interval must be ≥ 1")
        need(self.checkpoint_interval >= 1, "checkpoint_interval", "checkpoint_interval must be ≥ 1")
        need(self.k >= 1, "k", "k must be ≥ 1")
        need(self.W >= 1, "W", "W must be ≥ 1")
        need(self.leaf_size >= 1, "leaf_size", "leaf_size must be ≥ 1")
        need(1 <= self.liveness_len <= self.leaf_size, "liveness_len", "liveness_len must be in 1..leaf_size")
        need(self.chunk_bytes >= 1, "chunk_bytes", "chunk_bytes must be ≥ 1")
        # ciphertext carries a 32-byte seeder key and 16-byte nonce after the chunk
        leaves = max(2, 1 << (-(-(self.chunk_bytes + 48) // self.leaf_size) - 1).bit_length())
        need(self.k <= leaves, "k", f"k must be ≤ leaf count ({leaves})")
        need(self.max_txs >= 1, "max_txs", "max_txs must be ≥ 1")
        need(self.failure_grace >= 1, "failure_grace", "failure_grace must be ≥ 1")
        need(self.response_latency >= 0, "response_latency", "response_latency must be ≥ 0")
        for name in ("n_owners", "n_seeders", "n_validators", "owner_td", "seeder_td", "validator_stake",
                     "block_reward", "chunks_per_owner", "seeder_tokens", "hosting_term", "bonus_per_pass",
                     "rng_seed"):
            need(getattr(self, name) >= 0, name, f"{name} must be ≥ 0")
        need(isinstance(self.mean_interval, (int, float)) and self.mean_interval > 0,
             "mean_interval", "mean_interval must be > 0")
        try:
            g = as_fraction(self.gamma)
            rate = Fraction(str(self.base_rate))
        except (ValueError, ZeroDivisionError):
            raise ConfigInvalid("gamma", "gamma and base_rate must be numbers") from None
        need(0 <= g <= 1, "gamma", "gamma must be in [0, 1]")
        need(rate > 0, "base_rate", "base_rate must be > 0")
        need(self.seeder_role in ("seeder", "hybrid"), "seeder_role", "seeder_role must be seeder or hybrid")
        need(self.verifier in ("owner", "validator"), "verifier", "verifier must be owner or validator")
        d = self.delay
        need(isinstance(d, dict) and d.get("model") in ("fixed", "uniform"), "delay",
             "delay.model must be fixed or uniform")
        if d["model"] == "fixed":
            need(is_int(d.get("ticks")) and d["ticks"] >= 0, "delay", "delay.ticks must be an integer ≥ 0")
        else:
            lo, hi = d.get("low"), d.get("high")
            need(is_int(lo) and is_int(hi) and 0 <= lo <= hi, "delay", "delay needs integers 0 ≤ low ≤ high")
        names = set(self.node_names())
        for node, b in self.adversaries.items():
            need(node in names, "adversaries", f"unknown node {node}")
            need(b.policy in POLICIES, "adversaries", f"unknown policy {b.policy}")
            if b.policy == "offline_after":
                need(is_int(b.param) and b.param >= 0, "adversaries", "offline_after needs a tick ≥ 0")
            if b.policy == "discard_fraction":
                need(isinstance(b.param, (int, float)) and 0 <= b.param <= 1, "adversaries",
                     "discard_fraction needs a fraction in [0, 1]")
        return self


def inject_adversary(config: ScenarioConfig, node: str, behavior: NodeBehavior | str | dict) -> ScenarioConfig:
    if node not in config.node_names():
        raise UnknownNode(node)
    adv = dict(config.adversaries)
    adv[node] = NodeBehavior.parse(behavior)
    return dataclasses.replace(config, adversaries=dict(sorted(adv.items())))
