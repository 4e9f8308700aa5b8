"""Deterministic discrete-event engine with a single virtual clock."""

from __future__ import annotations

import heapq
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field, fields
from typing import IO, Any

ROLES = ("client", "gateway", "peer", "orderer")

# role pair -> link class name; pairs are unordered
_LINK_CLASS = {
    frozenset(["client", "gateway"]): "client_gw",
    frozenset(["gateway", "peer"]): "gw_peer",
    frozenset(["gateway", "orderer"]): "gw_orderer",
    frozenset(["orderer"]): "orderer_orderer",
    frozenset(["orderer", "peer"]): "orderer_peer",
    frozenset(["peer"]): "peer_peer",
}


class UnknownNode(KeyError):
    pass


@dataclass
class CostModel:
    """Link latencies and service times, all in simulated milliseconds."""

    client_gw: float = 1.0
    gw_peer: float = 1.0
    gw_orderer: float = 1.0
    orderer_orderer: float = 1.0
    orderer_peer: float = 1.0
    peer_peer: float = 1.0
    endorse_exec_ms: float = 5.0
    vscc_ms: float = 1.0
    mvcc_check_ms: float = 0.5
    commit_per_tx_ms: float = 1.0
    cache_rtt_ms: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if value < 0:
                raise ValueError(f"{f.name} must be non-negative, got {value}")

    def link(self, role_a: str, role_b: str) -> float:
        cls = _LINK_CLASS.get(frozenset([role_a, role_b]))
        if cls is None:
            raise ValueError(f"no link class between {role_a} and {role_b}")
        return getattr(self, cls)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(order=True)
class Event:
    time: float
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False)
    src: str | None = field(default=None, compare=False)


class Node:
    """Base for every simulated process. Subclasses implement ``handle``."""

    role = "node"

    def __init__(self, node_id: str, host: str | None = None):
        self.node_id = node_id
        # nodes sharing a host talk with zero latency
        self.host = host or node_id
        self.alive = True
        self.engine: Engine | None = None

    @property
    def now(self) -> float:
        return self.engine.now

    def send(self, dst: str, msg: Any, extra_delay: float = 0.0) -> None:
        self.engine.send(self.node_id, dst, msg, extra_delay)

    def after(self, delay: float, msg: Any) -> None:
        self.engine.schedule(self.node_id, msg, delay, src=self.node_id)

    def handle(self, msg: Any, src: str | None) -> None:
        raise NotImplementedError


class Engine:
    def __init__(self, cost: CostModel | None = None, seed: int = 0):
        self.cost = cost or CostModel()
        self.seed = seed
        self.now = 0.0
        self.nodes: dict[str, Node] = {}
        self._queue: list[Event] = []
        self._seq = 0
        self.processed = 0
        # (time, seq, target, kind, tx_id, status)
        self.trace: list[tuple] = []
        # node_id -> phase -> accumulated service ms
        self.service: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))

    def register(self, node: Node) -> Node:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node id {node.node_id}")
        node.engine = self
        self.nodes[node.node_id] = node
        return node

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def rng(self, node_id: str) -> random.Random:
        """Independent stream per node, stable under topology changes."""
        return random.Random(f"{self.seed}/{node_id}")

    def schedule(self, target: str, payload: Any, delay: float = 0.0,
                 src: str | None = None) -> Event:
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        self._seq += 1
        event = Event(self.now + delay, self._seq, target, payload, src)
        heapq.heappush(self._queue, event)
        return event

    def latency(self, src: str, dst: str) -> float:
        a, b = self.node(src), self.node(dst)
        if a.host == b.host:
            return 0.0
        return self.cost.link(a.role, b.role)

    def send(self, src: str, dst: str, msg: Any, extra_delay: float = 0.0) -> Event:
        return self.schedule(dst, msg, self.latency(src, dst) + extra_delay, src=src)

    def accrue(self, node_id: str, phase: str, ms: float) -> None:
        self.service[node_id][phase] += ms

    def total_service(self, phase: str, role: str | None = None) -> float:
        return sum(
            phases.get(phase, 0.0)
            for node_id, phases in self.service.items()
            if role is None or self.nodes[node_id].role == role
        )

    def run_until(self, t_end: float | None = None) -> int:
        """Process events in (time, seq) order; return how many ran."""
        count = 0
        while self._queue:
            if t_end is not None and self._queue[0].time > t_end:
                break
            event = heapq.heappop(self._queue)
            assert event.time >= self.now, "clock went backward"
            self.now = event.time
            payload = event.payload
            self.trace.append((
                event.time, event.seq, event.target, type(payload).__name__,
                getattr(payload, "tx_id", None), getattr(payload, "status", None),
            ))
            self.node(event.target).handle(payload, event.src)
            count += 1
        self.processed += count
        return count

    @property
    def pending(self) -> int:
        return len(self._queue)

    def write_trace(self, fp: IO[str]) -> None:
        for time, seq, target, kind, tx_id, status in self.trace:
            rec = {"time": time, "seq": seq, "target": target, "kind": kind}
            if tx_id is not None:
                rec["tx_id"] = tx_id
            if status is not None:
                rec["status"] = status
            fp.write(json.dumps(rec, sort_keys=True) + "\n")
