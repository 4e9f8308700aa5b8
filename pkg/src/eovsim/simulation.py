"""Compose a network, run it to quiescence, and replay fixed orders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .config import RunConfig
from .endorsement import EndorsementPolicy
from .gateway import Gateway
from .ledger import Check, Ledger, Mode, Transaction, WorldState, genesis_block
from .messages import Timer
from .metrics import MetricsCollector, RunSummary, summarize
from .netsim import CostModel, Engine
from .ordering import OrderingService, VersionCache, apply_updates, finalize_block, orderer_mvcc
from .validation import PeerNode, check_block, commit_block, new_peer_ledger
from .workload import Client, init_asset_pool


@dataclass
class RunResult:
    config: RunConfig
    engine: Engine
    metrics: MetricsCollector
    peers: list[PeerNode]
    gateways: list[Gateway]
    ordering: OrderingService
    clients: list[Client]
    assets: dict[str, bytes]
    summary: RunSummary | None = None

    @property
    def genesis_state(self) -> WorldState:
        return new_peer_ledger(self.assets).world_state

    @property
    def reference_peer(self) -> PeerNode:
        """The first gateway host; it is the one that notifies clients."""
        return next(p for p in self.peers if p.gateway is not None)

    def peer_valid(self, peer: PeerNode | None = None) -> dict[str, bool]:
        peer = peer or self.reference_peer
        return {r.tx_id: r.valid for r in peer.ledger.log_history if r.block_num > 0}

    def peer_vscc_failed(self, peer: PeerNode | None = None) -> set[str]:
        peer = peer or self.reference_peer
        return {r.tx_id for r in peer.ledger.log_history if r.vscc is Check.FAIL}


class Simulation:
    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        cfg = config
        self.engine = Engine(cfg.cost, cfg.seed)
        self.metrics = MetricsCollector()
        self.assets = init_asset_pool(cfg.workload)

        endorsing = [f"peer-{i}" for i in range(cfg.peers)]
        hosts = [f"gwpeer-{i}" for i in range(cfg.gateways)]
        gw_ids = [f"gw-{i}" for i in range(cfg.gateways)]
        self.policy = EndorsementPolicy(cfg.endorsement_required, frozenset(endorsing))

        genesis = genesis_block(self.assets)
        self.ordering = OrderingService(
            cfg.mode, [f"orderer-{i}" for i in range(cfg.orderers)], endorsing + hosts,
            self.metrics, block_size=cfg.block_size, block_interval_ms=cfg.block_interval_ms,
            cache_capacity=cfg.cache_capacity, bump_write_set=cfg.bump_write_set,
            genesis_hash=genesis.this_hash)
        for node in self.ordering.members.values():
            self.engine.register(node)

        self.peers = [PeerNode(p, cfg.mode, self.assets, self.policy, self.metrics)
                      for p in endorsing]
        self.peers += [PeerNode(h, cfg.mode, self.assets, self.policy, self.metrics,
                                endorsing=False, gateway=g) for h, g in zip(hosts, gw_ids)]
        for p in self.peers:
            self.engine.register(p)

        self.gateways = [Gateway(g, h, cfg.mode, self.policy, self.ordering.live_members,
                                 self.metrics, cfg.endorse_timeout_ms)
                         for g, h in zip(gw_ids, hosts)]
        for g in self.gateways:
            self.engine.register(g)

        self.clients = [Client(i, cfg.workload, gw_ids[i % len(gw_ids)], endorsing,
                               self.metrics, cfg.endorsement_required, cfg.endorsers_per_tx)
                        for i in range(cfg.workload.clients)]
        for c in self.clients:
            self.engine.register(c)

    def run(self) -> RunResult:
        cfg = self.config
        if cfg.crash_at_ms is not None:
            self.engine.schedule(self.ordering.leader, Timer("crash"), cfg.crash_at_ms)
        for c in self.clients:
            c.start()
        self.engine.run_until()
        result = RunResult(cfg, self.engine, self.metrics, self.peers, self.gateways,
                           self.ordering, self.clients, self.assets)
        if self.metrics.records:
            result.summary = summarize(self.metrics.records.values(), mode=cfg.mode.value,
                                       conflict_rate=cfg.workload.conflict_rate,
                                       seed=cfg.seed, warmup=cfg.warmup_fraction)
        return result


def run(config: RunConfig) -> RunResult:
    return Simulation(config).run()


@dataclass
class ReplayResult:
    valid: dict[str, bool]
    mvcc: dict[str, bool]
    ledger: Ledger
    blocks: list

    @property
    def digest(self) -> str:
        return self.ledger.world_state.digest()


def replay_order(assets: dict[str, bytes], ordered: Sequence[Transaction], mode: Mode,
                 policy: EndorsementPolicy, *, block_size: int = 10,
                 cache_capacity: int | None = None, bump_write_set: bool = False,
                 cost: CostModel | None = None) -> ReplayResult:
    """Push a fixed total order through the ordering and validation logic.

    No network and no timing: the order is taken as given, so two modes can
    be compared on exactly the same sequence of envelopes.
    """
    cost = cost or CostModel()
    ledger = new_peer_ledger(assets)
    cache = VersionCache(cache_capacity)
    mvcc: dict[str, bool] = {}
    txs = []
    for original in ordered:
        tx = original.fork()
        tx.vscc = Check.UNCHECKED
        tx.mvcc = Check.UNCHECKED
        if mode is not Mode.OG:
            updates = orderer_mvcc(tx, cache, bump_write_set)
            tx.set_mvcc(updates is not None)
            mvcc[tx.tx_id] = updates is not None
            if updates:
                apply_updates(cache, updates)
        txs.append(tx)

    blocks = []
    valid = {tx.tx_id: False for tx in txs}
    for start in range(0, len(txs), block_size):
        block = finalize_block(txs[start:start + block_size], mode, ledger.height,
                               ledger.tail_hash)
        checked = check_block(ledger, block, mode, policy, cost).block
        commit_block(ledger, checked, mode)
        blocks.append(checked)
        for tx in checked.txs:
            valid[tx.tx_id] = tx.valid
            if mode is Mode.OG and tx.mvcc is not Check.UNCHECKED:
                mvcc[tx.tx_id] = tx.mvcc is Check.PASS
    return ReplayResult(valid, mvcc, ledger, blocks)
