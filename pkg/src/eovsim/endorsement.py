"""Execution phase on endorsing peers, plus the endorsement-policy check."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

from . import identity
from .ledger import Mode, Transaction, WorldState, read_key
from .messages import EndorseReply
from .workload import verify_client_tag


class AssetNotFound(KeyError):
    pass


class PeerKeyCache:
    """Keys written by in-flight transactions the orderer already accepted."""

    def __init__(self) -> None:
        self.marks: dict[str, int] = {}

    def mark(self, keys: Iterable[str]) -> None:
        for key in keys:
            self.marks[key] = 1

    def clear(self, keys: Iterable[str]) -> None:
        for key in keys:
            if key in self.marks:
                self.marks[key] = 0

    def marked(self, key: str) -> bool:
        return self.marks.get(key, 0) == 1

    def first_marked(self, keys: Iterable[str]) -> str | None:
        for key in keys:
            if self.marked(key):
                return key
        return None


@dataclass(frozen=True)
class Endorsement:
    peer_id: str
    tx_id: str
    rset: tuple[tuple[str, int], ...]
    wset: tuple[tuple[str, bytes], ...]
    tag: str

    @classmethod
    def create(cls, peer_id: str, tx_id: str, rset: dict[str, int],
               wset: dict[str, bytes]) -> Endorsement:
        r = tuple(sorted(rset.items()))
        w = tuple(sorted(wset.items()))
        return cls(peer_id, tx_id, r, w, identity.sign(peer_id, tx_id, r, w))

    def verifies(self, tx_id: str, rset: dict[str, int], wset: dict[str, bytes]) -> bool:
        r = tuple(sorted(rset.items()))
        w = tuple(sorted(wset.items()))
        return identity.verify(self.peer_id, self.tag, tx_id, r, w)


@dataclass(frozen=True)
class EndorsementPolicy:
    required: int = 1
    eligible: frozenset[str] | None = None

    def __post_init__(self) -> None:
        if self.required < 1:
            raise ValueError("endorsement policy must require at least one endorsement")


def check_endorsements(tx: Transaction, policy: EndorsementPolicy) -> bool:
    """The VSCC predicate; the gateway and the peers both call this."""
    signers = set()
    for e in tx.endorsements:
        if e.tx_id != tx.tx_id or not e.verifies(tx.tx_id, tx.rset, tx.wset):
            return False
        if policy.eligible is not None and e.peer_id not in policy.eligible:
            return False
        signers.add(e.peer_id)
    if len(signers) < policy.required:
        return False
    return verify_client_tag(tx)


def simulate_chaincode(proposal, state: WorldState) -> tuple[dict[str, int], dict[str, bytes]]:
    """Run the transfer op against ``state`` without touching it."""
    if proposal.op != "transfer":
        raise ValueError(f"unsupported op {proposal.op!r}")
    current = read_key(state, proposal.asset)
    if current is None:
        raise AssetNotFound(proposal.asset)
    value, version = current
    seq = json.loads(value)["seq"]
    new = json.dumps({"owner": proposal.client_id, "seq": seq + 1}, sort_keys=True).encode()
    return {proposal.asset: version}, {proposal.asset: new}


def endorse(peer_id: str, proposal, state: WorldState, mode: Mode,
            cache: PeerKeyCache | None) -> EndorseReply:
    """Return the reply a peer sends; only simulated replies cost exec time."""
    tx_id = proposal.tx_id
    if mode is Mode.EA and cache is not None:
        hit = cache.first_marked(proposal.keys)
        if hit is not None:
            return EndorseReply(tx_id, peer_id, early_invalid=hit)
    try:
        rset, wset = simulate_chaincode(proposal, state)
    except AssetNotFound as exc:
        return EndorseReply(tx_id, peer_id, error=f"asset not found: {exc.args[0]}")
    return EndorseReply(tx_id, peer_id, endorsement=Endorsement.create(peer_id, tx_id, rset, wset))


def simulated(reply: EndorseReply) -> bool:
    return reply.early_invalid is None
