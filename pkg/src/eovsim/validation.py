"""Peer-side validation and commit, plus the peer node itself."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Mapping

from .endorsement import EndorsementPolicy, PeerKeyCache, check_endorsements, endorse
from .ledger import (Block, Check, Ledger, Mode, Transaction, append_block,
                     genesis_block)
from .messages import (BlockBroadcast, CommitNotify, EndorseRequest, InvalidNotify,
                       PeerCacheMark, Timer)
from .metrics import COMMITTED, INVALID_MVCC, INVALID_VSCC, MetricsCollector
from .netsim import Node


def peer_vscc(tx: Transaction, policy: EndorsementPolicy) -> bool:
    return check_endorsements(tx, policy)


def peer_mvcc(tx: Transaction, state) -> bool:
    """True iff every read version equals the current one in ``state``.

    An absent key sits at the initial version, so reading it at any other
    version fails.
    """
    return all(state.version(k) == v for k, v in tx.rset.items())


class _BlockView:
    """World state as updated by the valid txs earlier in the same block."""

    def __init__(self, ledger: Ledger):
        self.base = ledger.world_state
        self.overlay: dict[str, int] = {}

    def version(self, key: str) -> int:
        if key in self.overlay:
            return self.overlay[key]
        return self.base.version(key)

    def write(self, keys) -> None:
        for k in keys:
            self.overlay[k] = self.version(k) + 1


@dataclass
class CheckedBlock:
    block: Block
    service: dict[str, float]


def check_block(ledger: Ledger, block: Block, mode: Mode, policy: EndorsementPolicy,
                cost) -> CheckedBlock:
    """Reach this peer's verdict on every tx without touching the ledger.

    Returns the block with per-peer transaction copies carrying the final
    flags, and the service time each phase would take.
    """
    svc = {"vscc": 0.0, "mvcc": 0.0, "commit": 0.0}
    view = _BlockView(ledger)
    out = []
    for original in block.txs:
        tx = original.fork()
        if mode is Mode.OG:
            tx.set_vscc(peer_vscc(tx, policy))
            svc["vscc"] += cost.vscc_ms
            if tx.vscc is Check.PASS:
                tx.set_mvcc(peer_mvcc(tx, view))
                svc["mvcc"] += cost.mvcc_check_ms
        elif mode is Mode.OEMVCC:
            tx.set_vscc(peer_vscc(tx, policy))
            svc["vscc"] += cost.vscc_ms
        else:
            # blocks hold only orderer-accepted txs; the gateway already ran VSCC
            if tx.mvcc is not Check.PASS:
                raise AssertionError(f"{tx.tx_id}: non-pass tx in an ea block")
            tx.vscc = Check.PASS
        if tx.valid:
            svc["commit"] += cost.commit_per_tx_ms
            view.write(tx.wset)
        out.append(tx)
    return CheckedBlock(replace(block, txs=tuple(out)), svc)


def commit_block(ledger: Ledger, checked: Block, mode: Mode,
                 cache: PeerKeyCache | None = None) -> list[tuple[str, str]]:
    """Append a checked block; return (tx_id, status) for each tx."""
    append_block(ledger, checked)
    statuses = []
    for tx in checked.txs:
        if mode is Mode.EA and cache is not None:
            cache.clear(tx.wset)
        statuses.append((tx.tx_id, tx_status(tx)))
    return statuses


def tx_status(tx: Transaction) -> str:
    if tx.valid:
        return COMMITTED
    if tx.vscc is Check.FAIL:
        return INVALID_VSCC
    return INVALID_MVCC


def validate_block(ledger: Ledger, block: Block, mode: Mode, policy: EndorsementPolicy,
                   cost, cache: PeerKeyCache | None = None) -> list[tuple[str, str]]:
    """Check then commit in one step, for callers outside the engine."""
    checked = check_block(ledger, block, mode, policy, cost)
    return commit_block(ledger, checked.block, mode, cache)


def new_peer_ledger(assets: Mapping[str, bytes]) -> Ledger:
    ledger = Ledger()
    append_block(ledger, genesis_block(assets))
    return ledger


class PeerNode(Node):
    """Endorses proposals (when endorsing) and validates blocks one at a time."""

    role = "peer"

    def __init__(self, node_id: str, mode: Mode, assets: Mapping[str, bytes],
                 policy: EndorsementPolicy, metrics: MetricsCollector, *,
                 endorsing: bool = True, gateway: str | None = None):
        super().__init__(node_id)
        self.mode = mode
        self.policy = policy
        self.metrics = metrics
        self.endorsing = endorsing
        self.gateway = gateway
        self.ledger = new_peer_ledger(assets)
        self.key_cache = PeerKeyCache()
        self.inbox: dict[int, Block] = {}
        self.queue: deque[Block] = deque()
        self.busy = False
        self.duplicates = 0

    def handle(self, msg, src):
        if isinstance(msg, EndorseRequest):
            self._on_endorse(msg)
        elif isinstance(msg, BlockBroadcast):
            self.gossip_block(msg.block)
        elif isinstance(msg, PeerCacheMark):
            if self.mode is Mode.EA:
                self.key_cache.mark(msg.keys)
        elif isinstance(msg, Timer) and msg.name == "validated":
            self._on_validated(msg.token)
        else:
            raise TypeError(f"{self.node_id}: unexpected {msg!r}")

    def _on_endorse(self, msg: EndorseRequest) -> None:
        if not self.endorsing:
            raise AssertionError(f"{self.node_id} is not an endorsing peer")
        reply = endorse(self.node_id, msg.proposal, self.ledger.world_state, self.mode,
                        self.key_cache)
        exec_ms = 0.0 if reply.early_invalid is not None else self.engine.cost.endorse_exec_ms
        self.engine.accrue(self.node_id, "endorse", exec_ms)
        self.metrics.endorsement(msg.tx_id, self.node_id, self.now, self.now + exec_ms)
        self.send(msg.gateway, reply, exec_ms)

    def gossip_block(self, block: Block) -> None:
        """Accept a delivered block; every block is processed exactly once."""
        expected = self.ledger.height + len(self.queue) + (1 if self.busy else 0)
        if block.block_num < expected or block.block_num in self.inbox:
            self.duplicates += 1
            return
        self.inbox[block.block_num] = block
        while expected in self.inbox:
            self.queue.append(self.inbox.pop(expected))
            expected += 1
        self._next()

    def _next(self) -> None:
        if self.busy or not self.queue:
            return
        block = self.queue.popleft()
        checked = check_block(self.ledger, block, self.mode, self.policy, self.engine.cost)
        for phase, ms in checked.service.items():
            self.engine.accrue(self.node_id, phase, ms)
        self.busy = True
        self.after(sum(checked.service.values()), Timer("validated", checked.block))

    def _on_validated(self, checked: Block) -> None:
        statuses = commit_block(self.ledger, checked, self.mode, self.key_cache)
        self.busy = False
        if self.gateway is not None:
            for tx_id, status in statuses:
                if self.mode is Mode.OG:
                    self.metrics.record("verdict", tx_id, self.now)
                if status == COMMITTED:
                    self.send(self.gateway, CommitNotify(tx_id))
                else:
                    self.send(self.gateway, InvalidNotify(tx_id, status))
        self._next()
