"""Engine message payloads. Every variant that concerns one tx has ``tx_id``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class Propose:
    tx_id: str
    proposal: Any
    endorsers: tuple[str, ...]


@dataclass(frozen=True)
class EndorseRequest:
    tx_id: str
    proposal: Any
    gateway: str


@dataclass(frozen=True)
class EndorseReply:
    """Either ``endorsement`` is set, or ``early_invalid`` names the marked
    key that made the peer skip execution, or ``error`` explains a failure."""

    tx_id: str
    peer_id: str
    endorsement: Any = None
    early_invalid: str | None = None
    error: str | None = None


@dataclass(frozen=True)
class EnvelopeReady:
    tx_id: str
    envelope: Any


@dataclass(frozen=True)
class SubmitEnvelope:
    tx_id: str
    envelope: Any
    gateway: str


@dataclass(frozen=True)
class OrderAck:
    tx_id: str


@dataclass(frozen=True)
class BlockBroadcast:
    block: Any


@dataclass(frozen=True)
class CommitNotify:
    tx_id: str
    status: str = "committed"


@dataclass(frozen=True)
class InvalidNotify:
    tx_id: str
    status: str


@dataclass(frozen=True)
class ClientStatus:
    tx_id: str
    status: str


@dataclass(frozen=True)
class CacheUpdate:
    term: int
    log_index: int
    updates: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class PeerCacheMark:
    keys: tuple[str, ...]


@dataclass(frozen=True)
class Timer:
    name: str
    token: Any = None
