"""Brute-force serial referee for MVCC verdicts.

Walks a fixed total order one transaction at a time against its own copy
of the genesis state. Nothing here shares code with the peer or orderer
validation paths except the state digest encoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

from .ledger import INITIAL_VERSION, WorldState, state_digest


@dataclass(frozen=True)
class OracleVerdict:
    valid: dict[str, bool]
    digest: str
    versions: dict[str, int]

    @property
    def order(self) -> list[str]:
        return list(self.valid)

    def valid_ids(self) -> list[str]:
        return [t for t, ok in self.valid.items() if ok]


def serial_oracle(genesis: WorldState | Mapping[str, tuple[bytes, int]],
                  ordered: Iterable) -> OracleVerdict:
    """Validate ``ordered`` serially.

    Each item needs ``tx_id``, ``rset`` (key -> version read) and ``wset``
    (key -> value). A tx is valid iff all its reads are current; valid
    txs install their writes at version + 1.
    """
    store = dict(genesis.store if isinstance(genesis, WorldState) else genesis)
    valid: dict[str, bool] = {}
    for tx in ordered:
        ok = True
        for key, version in tx.rset.items():
            current = store[key][1] if key in store else INITIAL_VERSION
            if current != version:
                ok = False
                break
        valid[tx.tx_id] = ok
        if ok:
            for key, value in tx.wset.items():
                prev = store[key][1] if key in store else INITIAL_VERSION
                store[key] = (value, prev + 1)
    return OracleVerdict(valid, state_digest(store), {k: v for k, (_, v) in store.items()})


def diff_verdicts(expected: Mapping[str, bool], actual: Mapping[str, bool]) -> list[str]:
    """Human-readable disagreements between two verdict maps."""
    out = []
    for tx_id in expected.keys() | actual.keys():
        e, a = expected.get(tx_id), actual.get(tx_id)
        if e != a:
            out.append(f"{tx_id}: oracle={e} observed={a}")
    return sorted(out)


@dataclass(frozen=True)
class OrderedTx:
    tx_id: str
    rset: dict[str, int]
    wset: dict[str, bytes]


def write_order_dump(genesis: WorldState, entries: Iterable[tuple], fp: IO[str]) -> None:
    """One genesis line, then ``{tx_id, rset, wset, verdict}`` per ordered tx.

    ``entries`` yields ``(tx, verdict)`` pairs in order.
    """
    fp.write(json.dumps({"genesis": {k: [v.hex(), ver] for k, (v, ver)
                                     in sorted(genesis.store.items())}}) + "\n")
    for tx, verdict in entries:
        fp.write(json.dumps({
            "tx_id": tx.tx_id,
            "rset": dict(sorted(tx.rset.items())),
            "wset": {k: v.hex() for k, v in sorted(tx.wset.items())},
            "verdict": verdict,
        }) + "\n")


def read_order_dump(fp: IO[str]) -> tuple[dict, list[OrderedTx], dict[str, bool]]:
    lines = [json.loads(line) for line in fp if line.strip()]
    if not lines or "genesis" not in lines[0]:
        raise ValueError("order dump must start with a genesis line")
    genesis = {k: (bytes.fromhex(v), ver) for k, (v, ver) in lines[0]["genesis"].items()}
    txs, recorded = [], {}
    for rec in lines[1:]:
        txs.append(OrderedTx(rec["tx_id"], rec["rset"],
                             {k: bytes.fromhex(v) for k, v in rec["wset"].items()}))
        recorded[rec["tx_id"]] = rec["verdict"]
    return genesis, txs, recorded
