"""Versioned ledger: world state, blockchain and log history."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, Any, Iterable, Mapping

INITIAL_VERSION = 0
GENESIS_PREV_HASH = "0" * 64
GENESIS_TX_ID = "genesis"


class Mode(str, Enum):
    OG = "og"
    OEMVCC = "oemvcc"
    EA = "ea"


class Check(str, Enum):
    UNCHECKED = "unchecked"
    PASS = "pass"
    FAIL = "fail"


class LedgerError(Exception):
    pass


class HashChainMismatch(LedgerError):
    pass


class SequenceGap(LedgerError):
    pass


@dataclass
class Transaction:
    """An endorsed envelope as it travels through ordering and validation.

    ``vscc`` and ``mvcc`` move from ``UNCHECKED`` to a verdict once; use
    :meth:`fork` to give each node its own copy before setting them.
    """

    tx_id: str
    client_id: str
    proposal: Any
    rset: dict[str, int]
    wset: dict[str, bytes]
    endorsements: tuple = ()
    client_tag: str = ""
    bypass_vscc: bool = False
    vscc: Check = Check.UNCHECKED
    mvcc: Check = Check.UNCHECKED
    timestamps: dict[str, float] = field(default_factory=dict)

    def set_vscc(self, ok: bool) -> None:
        if self.vscc is not Check.UNCHECKED:
            raise ValueError(f"{self.tx_id}: vscc already {self.vscc.value}")
        self.vscc = Check.PASS if ok else Check.FAIL

    def set_mvcc(self, ok: bool) -> None:
        if self.mvcc is not Check.UNCHECKED:
            raise ValueError(f"{self.tx_id}: mvcc already {self.mvcc.value}")
        self.mvcc = Check.PASS if ok else Check.FAIL

    @property
    def valid(self) -> bool:
        return self.vscc is Check.PASS and self.mvcc is Check.PASS

    def fork(self) -> Transaction:
        return replace(self, timestamps=dict(self.timestamps))


def tx_digest(tx: Transaction) -> str:
    """Content hash of an envelope: id, read set and write set."""
    payload = json.dumps(
        [tx.tx_id, sorted(tx.rset.items()), sorted((k, v.hex()) for k, v in tx.wset.items())],
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def block_digest(block_num: int, prev_hash: str, tx_digests: Iterable[str],
                 flags: Iterable[Check]) -> str:
    payload = json.dumps(
        [block_num, prev_hash, list(tx_digests), [Check(f).value for f in flags]],
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class Block:
    """An ordered batch of transactions.

    ``validity_flags`` is the ordering-service metadata (the MVCC flag each
    tx carried when the block was cut) and is what the hash covers. The
    verdicts a peer reaches live on its own copies in ``txs``.
    """

    block_num: int
    txs: tuple[Transaction, ...]
    validity_flags: tuple[Check, ...]
    prev_hash: str
    this_hash: str

    @classmethod
    def build(cls, block_num: int, prev_hash: str,
              txs: Iterable[Transaction]) -> Block:
        txs = tuple(txs)
        flags = tuple(tx.mvcc for tx in txs)
        digest = block_digest(block_num, prev_hash, (tx_digest(tx) for tx in txs), flags)
        return cls(block_num, txs, flags, prev_hash, digest)

    def recompute_hash(self) -> str:
        return block_digest(self.block_num, self.prev_hash,
                            (tx_digest(tx) for tx in self.txs), self.validity_flags)


def _canonical_state(store: Mapping[str, tuple[bytes, int]]) -> bytes:
    rows = [[k, store[k][0].hex(), store[k][1]] for k in sorted(store)]
    return json.dumps(rows, separators=(",", ":")).encode()


def state_digest(store: Mapping[str, tuple[bytes, int]]) -> str:
    return hashlib.sha256(_canonical_state(store)).hexdigest()


class WorldState:
    """Key -> (value, version) store."""

    def __init__(self, store: Mapping[str, tuple[bytes, int]] | None = None):
        self.store: dict[str, tuple[bytes, int]] = dict(store or {})

    def __contains__(self, key: str) -> bool:
        return key in self.store

    def __len__(self) -> int:
        return len(self.store)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WorldState) and self.store == other.store

    def version(self, key: str) -> int:
        item = self.store.get(key)
        return item[1] if item else INITIAL_VERSION

    def versions(self) -> dict[str, int]:
        return {k: v for k, (_, v) in self.store.items()}

    def copy(self) -> WorldState:
        return WorldState(self.store)

    def digest(self) -> str:
        return state_digest(self.store)


def read_key(state: WorldState, key: str) -> tuple[bytes, int] | None:
    return state.store.get(key)


def apply_write_set(state: WorldState, wset: Mapping[str, bytes]) -> WorldState:
    """Install every write and bump its key's version by one."""
    for key, value in wset.items():
        state.store[key] = (value, state.version(key) + 1)
    return state


@dataclass(frozen=True)
class LogRecord:
    block_num: int
    tx_id: str
    vscc: Check
    mvcc: Check

    @property
    def valid(self) -> bool:
        return self.vscc is Check.PASS and self.mvcc is Check.PASS


class Ledger:
    def __init__(self) -> None:
        self.world_state = WorldState()
        self.blockchain: list[Block] = []
        self.log_history: list[LogRecord] = []
        # key -> every version it has been committed at, in commit order
        self.version_history: dict[str, list[int]] = {}

    @property
    def height(self) -> int:
        return len(self.blockchain)

    @property
    def tail_hash(self) -> str:
        return self.blockchain[-1].this_hash if self.blockchain else GENESIS_PREV_HASH

    def committed_tx_ids(self) -> list[str]:
        return [r.tx_id for r in self.log_history if r.valid]


def append_block(ledger: Ledger, block: Block) -> Ledger:
    if block.block_num != ledger.height:
        raise SequenceGap(f"expected block {ledger.height}, got {block.block_num}")
    if block.prev_hash != ledger.tail_hash:
        raise HashChainMismatch(f"block {block.block_num}: prev_hash does not match tail")
    if block.recompute_hash() != block.this_hash:
        raise HashChainMismatch(f"block {block.block_num}: content does not match this_hash")
    for tx in block.txs:
        if tx.valid:
            apply_write_set(ledger.world_state, tx.wset)
            for key in tx.wset:
                ledger.version_history.setdefault(key, []).append(
                    ledger.world_state.version(key))
        ledger.log_history.append(LogRecord(block.block_num, tx.tx_id, tx.vscc, tx.mvcc))
    ledger.blockchain.append(block)
    return ledger


def genesis_block(assets: Mapping[str, bytes]) -> Block:
    tx = Transaction(GENESIS_TX_ID, "genesis", None, {}, dict(assets),
                     vscc=Check.PASS, mvcc=Check.PASS)
    return Block.build(0, GENESIS_PREV_HASH, [tx])


def verify_chain(blocks: Iterable[Block]) -> list[str]:
    """Return a description of every hash-chain defect found."""
    problems = []
    prev = GENESIS_PREV_HASH
    for i, block in enumerate(blocks):
        if block.block_num != i:
            problems.append(f"block at position {i} numbered {block.block_num}")
        if block.prev_hash != prev:
            problems.append(f"block {block.block_num}: broken prev_hash link")
        if block.recompute_hash() != block.this_hash:
            problems.append(f"block {block.block_num}: this_hash does not match content")
        prev = block.this_hash
    return problems


def dump_ledger(ledger: Ledger, fp: IO[str]) -> None:
    """Write one JSON line per committed block."""
    for block in ledger.blockchain:
        txs = []
        for tx, flag in zip(block.txs, block.validity_flags):
            txs.append({
                "tx_id": tx.tx_id,
                "digest": tx_digest(tx),
                "vscc": tx.vscc.value,
                "mvcc": tx.mvcc.value,
                "order_flag": flag.value,
                "wset_keys": sorted(tx.wset),
            })
        fp.write(json.dumps({
            "block_num": block.block_num,
            "prev_hash": block.prev_hash,
            "this_hash": block.this_hash,
            "txs": txs,
        }, sort_keys=True) + "\n")


def load_ledger_dump(fp: IO[str]) -> list[dict]:
    return [json.loads(line) for line in fp if line.strip()]
