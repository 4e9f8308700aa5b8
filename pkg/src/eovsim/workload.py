"""Asset-transfer clients with a tunable conflict rate."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Sequence

from . import identity
from .ledger import Transaction
from .messages import ClientStatus, EnvelopeReady, Propose, SubmitEnvelope
from .metrics import COMMITTED, REJECTED, MetricsCollector
from .netsim import Node


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TooFewPeers(ValueError):
    pass


@dataclass
class WorkloadConfig:
    clients: int = 10
    hot_assets: int = 10
    cold_assets_per_client: int = 50
    conflict_rate: float = 0.5
    tx_per_client: int = 100
    interarrival_ms: float = 50.0
    arrival: str = "fixed"  # or "exponential"
    malicious_fraction: float = 0.0
    retry: bool = False
    max_retries: int = 3

    def validate(self) -> None:
        if self.clients < 1:
            raise ConfigError("clients", "need at least one client")
        if not 0.0 <= self.conflict_rate <= 1.0:
            raise ConfigError("conflict_rate", f"{self.conflict_rate} not in [0, 1]")
        if self.conflict_rate > 0 and self.hot_assets < 1:
            raise ConfigError("hot_assets", "hot pool is empty but conflict_rate > 0")
        if self.conflict_rate < 1 and self.cold_assets_per_client < 1:
            raise ConfigError("cold_assets_per_client",
                              "cold pool is empty but conflict_rate < 1")
        if self.hot_assets < 0 or self.cold_assets_per_client < 0:
            raise ConfigError("hot_assets", "pool sizes must be non-negative")
        if self.tx_per_client < 0:
            raise ConfigError("tx_per_client", "must be non-negative")
        if self.interarrival_ms <= 0:
            raise ConfigError("interarrival_ms", "must be positive")
        if self.arrival not in ("fixed", "exponential"):
            raise ConfigError("arrival", f"unknown arrival process {self.arrival!r}")
        if not 0.0 <= self.malicious_fraction <= 1.0:
            raise ConfigError("malicious_fraction", "not in [0, 1]")


@dataclass(frozen=True)
class Proposal:
    client_id: str
    asset: str
    nonce: int
    op: str = "transfer"
    hot: bool = False

    @property
    def tx_id(self) -> str:
        return f"{self.client_id}-{self.nonce}"

    @property
    def keys(self) -> tuple[str, ...]:
        return (self.asset,)


def client_id(index: int) -> str:
    return f"client-{index}"


def hot_key(i: int) -> str:
    return f"hot-{i}"


def cold_key(client: int, j: int) -> str:
    return f"cold-{client}-{j}"


def asset_value(owner: str, seq: int) -> bytes:
    return json.dumps({"owner": owner, "seq": seq}, sort_keys=True).encode()


def init_asset_pool(config: WorkloadConfig) -> dict[str, bytes]:
    """Deterministic initial values for every asset, in creation order."""
    config.validate()
    assets = {hot_key(i): asset_value("issuer", 0) for i in range(config.hot_assets)}
    for c in range(config.clients):
        for j in range(config.cold_assets_per_client):
            assets[cold_key(c, j)] = asset_value(client_id(c), 0)
    return assets


def generate_proposal(client: int, config: WorkloadConfig, rng: random.Random,
                      nonce: int) -> Proposal:
    # one draw for the class and one for the asset keeps the streams aligned
    hot = rng.random() < config.conflict_rate
    if hot:
        asset = hot_key(rng.randrange(config.hot_assets))
    else:
        asset = cold_key(client, rng.randrange(config.cold_assets_per_client))
    return Proposal(client_id(client), asset, nonce, hot=hot)


def select_endorsers(peers: Sequence[str], rng: random.Random, k: int = 2) -> tuple[str, ...]:
    if len(peers) < k:
        raise TooFewPeers(f"need {k} peers, have {len(peers)}")
    return tuple(sorted(rng.sample(list(peers), k)))


def sign_envelope(client: str, envelope: Transaction, required: int,
                  now: float | None = None) -> Transaction | None:
    """Attach the client's tag, or return None when endorsements are short."""
    if len(envelope.endorsements) < required:
        return None
    tags = [e.tag for e in envelope.endorsements]
    envelope.client_tag = identity.sign(client, envelope.tx_id, tags)
    if now is not None:
        envelope.timestamps["submit"] = now
    return envelope


def verify_client_tag(envelope: Transaction) -> bool:
    tags = [e.tag for e in envelope.endorsements]
    return identity.verify(envelope.client_id, envelope.client_tag, envelope.tx_id, tags)


class Client(Node):
    """Open-loop proposal generator bound to one gateway."""

    role = "client"

    def __init__(self, index: int, config: WorkloadConfig, gateway: str,
                 endorsing_peers: Sequence[str], metrics: MetricsCollector,
                 required: int = 1, endorsers_per_tx: int = 2):
        super().__init__(client_id(index))
        self.index = index
        self.config = config
        self.gateway = gateway
        self.endorsing_peers = list(endorsing_peers)
        self.metrics = metrics
        self.required = required
        self.endorsers_per_tx = endorsers_per_tx
        self.nonce = 0
        self.sent = 0
        self.proposals: dict[str, Proposal] = {}
        self.retries: dict[str, int] = {}
        self.aborted: list[str] = []
        self._rng: random.Random | None = None

    @property
    def rng(self) -> random.Random:
        if self._rng is None:
            self._rng = self.engine.rng(self.node_id)
        return self._rng

    def start(self) -> None:
        if self.config.tx_per_client:
            offset = self.index * self.config.interarrival_ms / self.config.clients
            self.after(offset, "tick")

    def _gap(self) -> float:
        if self.config.arrival == "exponential":
            return self.rng.expovariate(1.0 / self.config.interarrival_ms)
        return self.config.interarrival_ms

    def _submit(self, proposal: Proposal, retry_of: str | None = None) -> None:
        endorsers = select_endorsers(self.endorsing_peers, self.rng, self.endorsers_per_tx)
        self.proposals[proposal.tx_id] = proposal
        self.metrics.register(proposal.tx_id, self.node_id,
                              "hot" if proposal.hot else "cold", self.now, retry_of)
        self.send(self.gateway, Propose(proposal.tx_id, proposal, endorsers))

    def _new_proposal(self) -> Proposal:
        p = generate_proposal(self.index, self.config, self.rng, self.nonce)
        self.nonce += 1
        return p

    def handle(self, msg, src):
        if msg == "tick":
            self._submit(self._new_proposal())
            self.sent += 1
            if self.sent < self.config.tx_per_client:
                self.after(self._gap(), "tick")
        elif isinstance(msg, EnvelopeReady):
            self._on_envelope(msg)
        elif isinstance(msg, ClientStatus):
            self._on_status(msg)
        else:
            raise TypeError(f"{self.node_id}: unexpected {msg!r}")

    def _on_envelope(self, msg: EnvelopeReady) -> None:
        env = sign_envelope(self.node_id, msg.envelope, self.required, self.now)
        if env is None:
            self.aborted.append(msg.tx_id)
            self.metrics.terminal(msg.tx_id, REJECTED, self.now)
            return
        if self.config.malicious_fraction and self.rng.random() < self.config.malicious_fraction:
            # tamper after endorsement and skip the gateway check
            asset = self.proposals[msg.tx_id].asset
            env.wset = {**env.wset, asset: asset_value(self.node_id, 10**9)}
            env.bypass_vscc = True
            self.metrics.bump("malicious_submitted")
        self.send(self.gateway, SubmitEnvelope(msg.tx_id, env, self.gateway))

    def _on_status(self, msg: ClientStatus) -> None:
        if not self.metrics.terminal(msg.tx_id, msg.status, self.now):
            return
        if not self.config.retry or msg.status == COMMITTED:
            return
        root = self.metrics.records[msg.tx_id].retry_of or msg.tx_id
        if self.retries.get(root, 0) >= self.config.max_retries:
            return
        self.retries[root] = self.retries.get(root, 0) + 1
        old = self.proposals[msg.tx_id]
        fresh = Proposal(self.node_id, old.asset, self.nonce, hot=old.hot)
        self.nonce += 1
        self._submit(fresh, retry_of=root)
