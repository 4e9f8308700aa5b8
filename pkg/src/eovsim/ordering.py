"""Ordering service: leader-based block cutting with optional early MVCC.

In ``oemvcc`` and ``ea`` modes the leader checks every transaction's read
set against a replicated version cache as soon as it is ordered, tells the
gateway about failures right away, and (``ea``) prunes failures from the
block and pre-marks the written keys on every peer.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .ledger import GENESIS_PREV_HASH, Block, Check, Mode, Transaction
from .messages import (BlockBroadcast, CacheUpdate, InvalidNotify, OrderAck, PeerCacheMark,
                       SubmitEnvelope, Timer)
from .metrics import INVALID_MVCC, MetricsCollector
from .netsim import Node


class VersionCache:
    """Key -> next expected version, with a bounded hot tier.

    When the hot tier outgrows ``capacity`` the oldest-inserted entries move
    to an unbounded persistent tier; lookups consult both.
    """

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self.hot: OrderedDict[str, int] = OrderedDict()
        self.cold: dict[str, int] = {}

    def get(self, key: str) -> int | None:
        if key in self.hot:
            return self.hot[key]
        return self.cold.get(key)

    def __contains__(self, key: str) -> bool:
        return key in self.hot or key in self.cold

    def __getitem__(self, key: str) -> int:
        v = self.get(key)
        if v is None:
            raise KeyError(key)
        return v

    def __setitem__(self, key: str, version: int) -> None:
        if key in self.hot:
            self.hot[key] = version
            return
        self.cold.pop(key, None)
        self.hot[key] = version
        evict_to_persistent(self)

    def __len__(self) -> int:
        return len(self.hot) + len(self.cold)

    def snapshot(self) -> dict[str, int]:
        return {**self.cold, **self.hot}

    def copy(self) -> VersionCache:
        c = VersionCache(self.capacity)
        c.hot = OrderedDict(self.hot)
        c.cold = dict(self.cold)
        return c


def evict_to_persistent(cache: VersionCache) -> None:
    if cache.capacity is None:
        return
    while len(cache.hot) > cache.capacity:
        key, version = cache.hot.popitem(last=False)
        cache.cold[key] = version


def orderer_mvcc(tx: Transaction, cache: VersionCache,
                 bump_write_set: bool = False) -> list[tuple[str, int]] | None:
    """Check ``tx`` against the cache without mutating it.

    Returns the cache updates to replicate when the tx passes, or None when
    some read-set key is cached at a newer version than the one read. A key
    the cache has never seen is accepted as-is.
    """
    updates = []
    for key, version in tx.rset.items():
        cached = cache.get(key)
        if cached is not None and version < cached:
            return None
        updates.append((key, version + 1))
    if bump_write_set:
        for key in tx.wset:
            if key in tx.rset:
                continue
            cached = cache.get(key)
            # without world state there is no baseline for an uncached blind write
            if cached is not None:
                updates.append((key, cached + 1))
    return updates


def apply_updates(cache: VersionCache, updates: Iterable[tuple[str, int]]) -> None:
    for key, version in updates:
        cache[key] = version


def finalize_block(txs: Sequence[Transaction], mode: Mode, block_num: int,
                   prev_hash: str) -> Block:
    if mode is Mode.EA:
        txs = [tx for tx in txs if tx.mvcc is Check.PASS]
    return Block.build(block_num, prev_hash, txs)


@dataclass
class LogEntry:
    index: int
    tx: Transaction
    gateway: str
    arrival: float
    verdict: bool | None = None
    updates: tuple[tuple[str, int], ...] = ()
    verdict_time: float | None = None
    verdict_term: int | None = None
    block_num: int | None = None


@dataclass
class BlockRecord:
    first_pending: float
    cut_time: float
    n_ordered: int
    drain_bound: float
    block_num: int | None = None
    broadcast_time: float | None = None
    n_broadcast: int | None = None


@dataclass
class Failover:
    time: float
    old_leader: str
    new_leader: str
    replayed: dict[str, int] = field(default_factory=dict)
    requeued: int = 0


class OrdererNode(Node):
    role = "orderer"

    def __init__(self, node_id: str, group: OrderingService, capacity: int | None):
        super().__init__(node_id)
        self.group = group
        self.cache = VersionCache(capacity)
        # log entries [0, applied) have been reflected in this replica
        self.applied = 0

    def handle(self, msg, src):
        g = self.group
        if isinstance(msg, SubmitEnvelope):
            if self.alive and g.leader == self.node_id:
                g.receive_transaction(msg)
            else:
                self.send(g.leader, msg)
        elif isinstance(msg, CacheUpdate):
            if self.alive and msg.term == g.term:
                apply_updates(self.cache, msg.updates)
                self.applied = msg.log_index + 1
        elif isinstance(msg, Timer):
            if msg.name == "crash":
                g.crash(self.node_id)
            elif self.alive and msg.token[0] == g.term:
                g.on_timer(msg)
        else:
            raise TypeError(f"{self.node_id}: unexpected {msg!r}")


class OrderingService:
    """Shared state of the orderer group; only the current leader acts.

    Log replication is synchronous and free, so ``log`` is the one copy all
    members agree on. Cache replication is not: followers apply a leader's
    updates ``cache_rtt_ms`` later, and the leader waits that long before
    its next MVCC check.
    """

    def __init__(self, mode: Mode, member_ids: Sequence[str], peers: Sequence[str],
                 metrics: MetricsCollector, *, block_size: int = 10,
                 block_interval_ms: float = 2000.0, cache_capacity: int | None = None,
                 bump_write_set: bool = False, genesis_hash: str = GENESIS_PREV_HASH,
                 first_block_num: int = 1, check_coherence: bool = True):
        if not member_ids:
            raise ValueError("need at least one orderer")
        self.mode = mode
        self.members = {m: OrdererNode(m, self, cache_capacity) for m in member_ids}
        self.peers = list(peers)
        self.metrics = metrics
        self.block_size = block_size
        self.block_interval_ms = block_interval_ms
        self.bump_write_set = bump_write_set
        self.check_coherence = check_coherence
        self.term = 0
        self.leader = min(member_ids)
        self.log: list[LogEntry] = []
        self.pending: list[LogEntry] = []
        self.first_pending: float | None = None
        self.timer_gen = 0
        self.cut_queue: deque[tuple[list[LogEntry], BlockRecord]] = deque()
        self.mvcc_queue: deque[LogEntry] = deque()
        self.mvcc_busy = False
        self.unverdicted = 0
        self.next_block_num = first_block_num
        self.prev_hash = genesis_hash
        self.blocks: list[Block] = []
        self.block_records: list[BlockRecord] = []
        self.failovers: list[Failover] = []
        self.coherence_violations: list[str] = []

    @property
    def early_mvcc(self) -> bool:
        return self.mode is not Mode.OG

    @property
    def leader_node(self) -> OrdererNode:
        return self.members[self.leader]

    @property
    def engine(self):
        return self.leader_node.engine

    def live_members(self) -> list[str]:
        return [m for m, node in sorted(self.members.items()) if node.alive]

    # -- ordering ---------------------------------------------------------

    def receive_transaction(self, msg: SubmitEnvelope) -> None:
        leader = self.leader_node
        entry = LogEntry(len(self.log), msg.envelope.fork(), msg.gateway, leader.now)
        self.log.append(entry)
        self.pending.append(entry)
        if len(self.pending) == 1:
            self.first_pending = leader.now
            self._arm_timer(self.block_interval_ms)
        leader.send(msg.gateway, OrderAck(entry.tx.tx_id))
        if self.early_mvcc:
            self.unverdicted += 1
            self.mvcc_queue.append(entry)
            self._kick()
        if len(self.pending) >= self.block_size:
            self.cut()

    def _arm_timer(self, delay: float) -> None:
        self.timer_gen += 1
        self.leader_node.after(delay, Timer("block_timer", (self.term, self.timer_gen)))

    def on_timer(self, msg: Timer) -> None:
        if msg.name == "block_timer":
            if msg.token[1] == self.timer_gen and self.pending:
                self.cut()
        elif msg.name == "mvcc_done":
            self._mvcc_done(self.log[msg.token[1]])
        elif msg.name == "mvcc_ready":
            self.mvcc_busy = False
            self._kick()

    def cut(self) -> None:
        """Close the pending block; it goes out once its MVCC checks drain."""
        entries, self.pending = self.pending, []
        self.timer_gen += 1
        cost = self.engine.cost
        rec = BlockRecord(
            first_pending=self.first_pending,
            cut_time=self.leader_node.now,
            n_ordered=len(entries),
            drain_bound=self.unverdicted * (cost.mvcc_check_ms + cost.cache_rtt_ms),
        )
        self.first_pending = None
        self.block_records.append(rec)
        self.cut_queue.append((entries, rec))
        self._try_broadcast()

    def _try_broadcast(self) -> None:
        while self.cut_queue:
            entries, rec = self.cut_queue[0]
            if self.early_mvcc and any(e.verdict is None for e in entries):
                return
            self.cut_queue.popleft()
            block = finalize_block([e.tx for e in entries], self.mode,
                                   self.next_block_num, self.prev_hash)
            self.next_block_num += 1
            self.prev_hash = block.this_hash
            for e in entries:
                e.block_num = block.block_num
            rec.block_num = block.block_num
            rec.broadcast_time = self.leader_node.now
            rec.n_broadcast = len(block.txs)
            self.blocks.append(block)
            for peer in self.peers:
                self.leader_node.send(peer, BlockBroadcast(block))

    # -- MVCC ---------------------------------------------------------------

    def _kick(self) -> None:
        if self.mvcc_busy or not self.mvcc_queue:
            return
        entry = self.mvcc_queue.popleft()
        self.mvcc_busy = True
        cost = self.engine.cost.mvcc_check_ms
        self.engine.accrue(self.leader, "mvcc", cost)
        self.leader_node.after(cost, Timer("mvcc_done", (self.term, entry.index)))

    def _mvcc_done(self, entry: LogEntry) -> None:
        leader = self.leader_node
        if self.check_coherence:
            self._check_coherence(entry)
        updates = orderer_mvcc(entry.tx, leader.cache, self.bump_write_set)
        ok = updates is not None
        entry.tx.set_mvcc(ok)
        entry.verdict = ok
        entry.updates = tuple(updates or ())
        entry.verdict_time = leader.now
        entry.verdict_term = self.term
        self.unverdicted -= 1
        self.metrics.record("verdict", entry.tx.tx_id, leader.now)
        if ok:
            self.replicate_cache(entry)
            if self.mode is Mode.EA:
                keys = tuple(entry.tx.wset)
                for peer in self.peers:
                    leader.send(peer, PeerCacheMark(keys))
        else:
            leader.applied = entry.index + 1
            leader.send(entry.gateway, InvalidNotify(entry.tx.tx_id, INVALID_MVCC))
            self.mvcc_busy = False
            self._kick()
        self._try_broadcast()

    def replicate_cache(self, entry: LogEntry) -> None:
        """Write-through: leader applies now, followers within one cache RTT,
        and the leader holds further MVCC checks until then."""
        leader = self.leader_node
        rtt = self.engine.cost.cache_rtt_ms
        apply_updates(leader.cache, entry.updates)
        leader.applied = entry.index + 1
        msg = CacheUpdate(self.term, entry.index, entry.updates)
        for m in self.live_members():
            if m != self.leader:
                self.engine.schedule(m, msg, rtt, src=self.leader)
        self.engine.accrue(self.leader, "replicate", rtt)
        leader.after(rtt, Timer("mvcc_ready", (self.term,)))

    def _check_coherence(self, entry: LogEntry) -> None:
        ref = self.leader_node.cache.snapshot()
        for m in self.live_members():
            if m != self.leader and self.members[m].cache.snapshot() != ref:
                self.coherence_violations.append(
                    f"{m} cache differs from leader {self.leader} before checking "
                    f"{entry.tx.tx_id}")

    # -- failure handling -----------------------------------------------------

    def crash(self, node_id: str) -> None:
        node = self.members[node_id]
        if not node.alive:
            return
        node.alive = False
        if node_id == self.leader:
            live = self.live_members()
            if not live:
                raise RuntimeError("every orderer has crashed")
            self.leader_failover(live[0])

    def leader_failover(self, new_leader: str) -> Failover:
        """Hand leadership to ``new_leader`` and repair every live replica.

        Each replica replays the verdicts recorded in the log from its own
        last applied point; verdicts already issued are reused, never
        recomputed. Entries still awaiting MVCC are re-queued in log order.
        """
        old = self.leader
        self.term += 1
        self.leader = new_leader
        fo = Failover(self.members[new_leader].now, old, new_leader)
        verdicted = 0
        while verdicted < len(self.log) and self.log[verdicted].verdict is not None:
            verdicted += 1
        for m in self.live_members():
            node = self.members[m]
            fo.replayed[m] = replay_log(node.cache, self.log[node.applied:verdicted])
            node.applied = max(node.applied, verdicted)

        self.mvcc_queue = deque(e for e in self.log[verdicted:] if self.early_mvcc)
        fo.requeued = len(self.mvcc_queue)
        cost = self.engine.cost
        for _, rec in self.cut_queue:
            rec.drain_bound += 2 * cost.cache_rtt_ms + cost.mvcc_check_ms
        # resync costs one cache round trip before checks resume
        self.mvcc_busy = True
        self.leader_node.after(cost.cache_rtt_ms, Timer("mvcc_ready", (self.term,)))
        if self.pending:
            deadline = self.first_pending + self.block_interval_ms
            self._arm_timer(max(0.0, deadline - self.leader_node.now))
        self.failovers.append(fo)
        return fo

    # -- views --------------------------------------------------------------

    def ordered_txs(self) -> list[Transaction]:
        return [e.tx for e in self.log]

    def verdicts(self) -> dict[str, bool]:
        return {e.tx.tx_id: e.verdict for e in self.log if e.verdict is not None}


def replay_log(cache: VersionCache, entries: Iterable[LogEntry]) -> int:
    """Re-apply the cache effect of already-decided log entries."""
    n = 0
    for e in entries:
        if e.verdict:
            apply_updates(cache, e.updates)
            n += 1
    return n
