"""Client-facing gateway hosted on a non-endorsing peer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .endorsement import EndorsementPolicy, check_endorsements
from .ledger import Mode, Transaction
from .messages import (ClientStatus, CommitNotify, EndorseReply, EndorseRequest, EnvelopeReady,
                       InvalidNotify, OrderAck, Propose, SubmitEnvelope, Timer)
from .metrics import INVALID_MVCC, INVALID_VSCC, REJECTED, MetricsCollector
from .netsim import Node

log = logging.getLogger(__name__)


class EndorsementMismatch(Exception):
    pass


class EndorsementTimeout(Exception):
    pass


class InsufficientEndorsements(Exception):
    pass


@dataclass
class PendingProposal:
    tx_id: str
    client_id: str
    proposal: object
    endorsers: tuple[str, ...]
    replies: dict[str, EndorseReply] = field(default_factory=dict)
    resolved: bool = False


def collect_endorsements(proposal, replies: Mapping[str, EndorseReply],
                         policy: EndorsementPolicy) -> Transaction:
    """Assemble an unsigned envelope from endorsement replies.

    Every successful endorsement must agree on the read-write set.
    """
    good = [r.endorsement for r in replies.values() if r.endorsement is not None]
    if len(good) < policy.required:
        raise InsufficientEndorsements(
            f"{proposal.tx_id}: {len(good)} endorsements, need {policy.required}")
    first = good[0]
    for e in good[1:]:
        if e.rset != first.rset or e.wset != first.wset:
            raise EndorsementMismatch(f"{proposal.tx_id}: endorsers disagree on read-write set")
    return Transaction(
        tx_id=proposal.tx_id,
        client_id=proposal.client_id,
        proposal=proposal,
        rset=dict(first.rset),
        wset=dict(first.wset),
        endorsements=tuple(sorted(good, key=lambda e: e.peer_id)),
    )


def gateway_vscc(envelope: Transaction, policy: EndorsementPolicy) -> bool:
    return check_endorsements(envelope, policy)


class Gateway(Node):
    role = "gateway"

    def __init__(self, node_id: str, host_peer: str, mode: Mode, policy: EndorsementPolicy,
                 live_orderers: Callable[[], Sequence[str]], metrics: MetricsCollector,
                 endorse_timeout_ms: float = 1000.0):
        super().__init__(node_id, host=host_peer)
        self.mode = mode
        self.policy = policy
        self.live_orderers = live_orderers
        self.metrics = metrics
        self.endorse_timeout_ms = endorse_timeout_ms
        self.pending: dict[str, PendingProposal] = {}
        self.clients: dict[str, str] = {}
        self.notified: set[str] = set()
        self.suppressed = 0
        self._rr = 0

    def handle(self, msg, src):
        if isinstance(msg, Propose):
            self._on_propose(msg, src)
        elif isinstance(msg, EndorseReply):
            self._on_reply(msg)
        elif isinstance(msg, SubmitEnvelope):
            self._on_submit(msg)
        elif isinstance(msg, OrderAck):
            self.metrics.record("order_ack", msg.tx_id, self.now)
        elif isinstance(msg, (CommitNotify, InvalidNotify)):
            self.route_notification(self.clients.get(msg.tx_id), msg.tx_id, msg.status)
        elif isinstance(msg, Timer) and msg.name == "endorse_deadline":
            self._on_deadline(msg.token)
        else:
            raise TypeError(f"{self.node_id}: unexpected {msg!r}")

    def _on_propose(self, msg: Propose, client: str) -> None:
        self.clients[msg.tx_id] = client
        self.pending[msg.tx_id] = PendingProposal(msg.tx_id, client, msg.proposal, msg.endorsers)
        for peer in msg.endorsers:
            self.send(peer, EndorseRequest(msg.tx_id, msg.proposal, self.node_id))
        self.after(self.endorse_timeout_ms, Timer("endorse_deadline", msg.tx_id))

    def _on_reply(self, reply: EndorseReply) -> None:
        p = self.pending.get(reply.tx_id)
        if p is None:
            return
        if p.resolved:
            if reply.endorsement is not None:
                # one endorser skipped execution, the other did not
                self.metrics.bump("ea_split_replies")
            return
        p.replies[reply.peer_id] = reply
        if reply.early_invalid is not None:
            if any(r.endorsement is not None for r in p.replies.values()):
                self.metrics.bump("ea_split_replies")
            self._resolve(p)
            self.metrics.bump("early_invalid")
            self.route_notification(p.client_id, p.tx_id, INVALID_MVCC)
            return
        if len(p.replies) < len(p.endorsers):
            return
        self._resolve(p)
        try:
            envelope = collect_endorsements(p.proposal, p.replies, self.policy)
        except (EndorsementMismatch, InsufficientEndorsements) as exc:
            self.metrics.bump(type(exc).__name__)
            self.route_notification(p.client_id, p.tx_id, REJECTED)
            return
        self.metrics.record("endorse_done", p.tx_id, self.now)
        self.send(p.client_id, EnvelopeReady(p.tx_id, envelope))

    def _on_deadline(self, tx_id: str) -> None:
        p = self.pending.get(tx_id)
        if p is None or p.resolved:
            return
        self._resolve(p)
        self.metrics.bump(EndorsementTimeout.__name__)
        self.route_notification(p.client_id, tx_id, REJECTED)

    def _resolve(self, p: PendingProposal) -> None:
        # the entry stays so late replies are recognised
        p.resolved = True

    def _on_submit(self, msg: SubmitEnvelope) -> None:
        env = msg.envelope
        delay = 0.0
        if not env.bypass_vscc:
            self.engine.accrue(self.node_id, "vscc", self.engine.cost.vscc_ms)
            delay = self.engine.cost.vscc_ms
            if not gateway_vscc(env, self.policy):
                self.route_notification(self.clients[env.tx_id], env.tx_id, INVALID_VSCC, delay)
                return
        elif self.mode is Mode.EA:
            raise AssertionError(f"{env.tx_id}: gateway bypass is forbidden in ea mode")
        self.send(self._next_orderer(), SubmitEnvelope(env.tx_id, env, self.node_id), delay)

    def _next_orderer(self) -> str:
        live = list(self.live_orderers())
        target = live[self._rr % len(live)]
        self._rr += 1
        return target

    def route_notification(self, client_id: str | None, tx_id: str, status: str,
                           delay: float = 0.0) -> None:
        """Deliver a terminal status to the client once; later ones are dropped."""
        if client_id is None:
            log.debug("%s: notification for unknown tx %s dropped", self.node_id, tx_id)
            self.metrics.bump("unknown_notifications")
            return
        if tx_id in self.notified:
            self.suppressed += 1
            return
        self.notified.add(tx_id)
        self.send(client_id, ClientStatus(tx_id, status), delay)
