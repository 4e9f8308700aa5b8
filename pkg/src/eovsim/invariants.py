"""Post-run safety checks. Each returns a list of human-readable violations."""

from __future__ import annotations

from typing import Iterable

from .ledger import (GENESIS_PREV_HASH, GENESIS_TX_ID, Check, Ledger, Mode, block_digest,
                     verify_chain)
from .metrics import TERMINAL
from .oracle import diff_verdicts, serial_oracle

EPS = 1e-9


def check_replication(peers) -> list[str]:
    out = []
    ref = peers[0]
    ref_digest = ref.ledger.world_state.digest()
    for p in peers[1:]:
        if p.ledger.height != ref.ledger.height:
            out.append(f"{p.node_id} height {p.ledger.height} != {ref.node_id} "
                       f"height {ref.ledger.height}")
        if p.ledger.world_state.digest() != ref_digest:
            out.append(f"{p.node_id} state digest differs from {ref.node_id}")
    return out


def check_monotonic(ledger: Ledger) -> list[str]:
    """Committed versions of each key run 1, 2, 3, ... with no gaps."""
    out = []
    for key, versions in ledger.version_history.items():
        expected = list(range(1, len(versions) + 1))
        if versions != expected:
            out.append(f"{key}: committed versions {versions[:6]}... not consecutive")
    for key, (_, version) in ledger.world_state.store.items():
        if version != len(ledger.version_history.get(key, ())):
            out.append(f"{key}: final version {version} disagrees with commit history")
    return out


def check_chain(ledger: Ledger) -> list[str]:
    return verify_chain(ledger.blockchain)


def check_block_discipline(ordering, block_size: int, interval_ms: float) -> list[str]:
    out = []
    for rec in ordering.block_records:
        tag = f"block {rec.block_num}"
        if rec.n_ordered > block_size:
            out.append(f"{tag}: {rec.n_ordered} txs exceeds block size {block_size}")
        if rec.cut_time - rec.first_pending > interval_ms + EPS:
            out.append(f"{tag}: cut {rec.cut_time - rec.first_pending:.3f} ms after "
                       f"first pending tx, interval is {interval_ms}")
        if rec.broadcast_time is None:
            out.append(f"cut at {rec.cut_time}: never broadcast")
        elif rec.broadcast_time - rec.cut_time > rec.drain_bound + EPS:
            out.append(f"{tag}: broadcast {rec.broadcast_time - rec.cut_time:.3f} ms after cut, "
                       f"drain bound {rec.drain_bound:.3f}")
    return out


def check_ea_purity(blocks) -> list[str]:
    return [f"block {b.block_num}: {tx.tx_id} has mvcc={tx.mvcc.value}"
            for b in blocks for tx in b.txs if tx.mvcc is not Check.PASS]


def check_orderer_failures_not_committed(ordering, ledger: Ledger) -> list[str]:
    failed = {t for t, ok in ordering.verdicts().items() if not ok}
    return [f"{t}: failed orderer MVCC but committed"
            for t in ledger.committed_tx_ids() if t in failed]


def check_notifications(metrics) -> list[str]:
    out = list(metrics.protocol_errors)
    s_total = {s: 0 for s in TERMINAL}
    in_flight = 0
    for rec in metrics.records.values():
        if rec.status is None:
            in_flight += 1
        else:
            s_total[rec.status] += 1
            if rec.notify < rec.submit:
                out.append(f"{rec.tx_id}: notified before submission")
    if sum(s_total.values()) + in_flight != len(metrics.records):
        out.append("conservation: terminal + in-flight != submitted")
    return out


def notify_events(trace: Iterable[tuple]) -> list[tuple[float, str]]:
    """First ClientStatus delivery per tx, straight from the event trace."""
    seen = {}
    for time, _seq, _target, kind, tx_id, _status in trace:
        if kind == "ClientStatus" and tx_id not in seen:
            seen[tx_id] = time
    return [(t, tx) for tx, t in seen.items()]


def check_throughput(summary, trace) -> list[str]:
    if summary is None:
        return []
    start, end = summary.window
    count = sum(1 for t, _ in notify_events(trace) if start <= t <= end)
    out = []
    if count != summary.notifications["overall"]:
        out.append(f"throughput: trace has {count} notifications in window, "
                   f"metrics counted {summary.notifications['overall']}")
    span_s = (end - start) / 1000.0
    if summary.throughput["overall"] != count / span_s:
        out.append("throughput: reported rate is not count / window")
    return out


def check_service(engine, mode: Mode) -> list[str]:
    out = []
    if mode is not Mode.OG:
        mvcc = engine.total_service("mvcc", role="peer")
        if mvcc != 0:
            out.append(f"peer MVCC service {mvcc} ms in {mode.value} mode")
    if mode is Mode.EA:
        vscc = engine.total_service("vscc", role="peer")
        if vscc != 0:
            out.append(f"peer VSCC service {vscc} ms in ea mode")
    return out


def check_run(result) -> list[str]:
    """Every structural invariant for one finished run."""
    cfg = result.config
    out = []
    out += check_replication(result.peers)
    for p in result.peers:
        out += [f"{p.node_id}: {v}" for v in check_monotonic(p.ledger)]
        out += [f"{p.node_id}: {v}" for v in check_chain(p.ledger)]
        if p.queue or p.inbox or p.busy:
            out.append(f"{p.node_id}: blocks left unprocessed")
    out += check_block_discipline(result.ordering, cfg.block_size, cfg.block_interval_ms)
    if cfg.mode is Mode.EA:
        out += check_ea_purity(result.ordering.blocks)
    if cfg.mode is not Mode.OG:
        out += check_orderer_failures_not_committed(result.ordering,
                                                    result.reference_peer.ledger)
    out += check_notifications(result.metrics)
    out += check_throughput(result.summary, result.engine.trace)
    out += check_service(result.engine, cfg.mode)
    out += result.ordering.coherence_violations
    return out


def oracle_check(result) -> list[str]:
    """Referee the run's order with the serial oracle.

    In og the peers must match the oracle on the order minus txs whose
    endorsements did not verify. In the early modes the orderer's verdicts
    must match the oracle on the full order; final state is compared too
    when no tx failed signature checks.
    """
    genesis = result.genesis_state
    ordered = result.ordering.ordered_txs()
    peer = result.reference_peer
    vscc_failed = result.peer_vscc_failed()
    out = []
    if result.config.mode is Mode.OG:
        verdict = serial_oracle(genesis, [t for t in ordered if t.tx_id not in vscc_failed])
        observed = {t: ok for t, ok in result.peer_valid().items() if t not in vscc_failed}
        out += diff_verdicts(verdict.valid, observed)
        if peer.ledger.world_state.digest() != verdict.digest:
            out.append("final state digest differs from oracle")
        return out

    verdict = serial_oracle(genesis, ordered)
    out += diff_verdicts(verdict.valid, result.ordering.verdicts())
    if not vscc_failed:
        if peer.ledger.world_state.digest() != verdict.digest:
            out.append("final state digest differs from oracle")
        committed = set(peer.ledger.committed_tx_ids()) - {GENESIS_TX_ID}
        if committed != set(verdict.valid_ids()):
            out.append(f"committed set differs from oracle-valid set by "
                       f"{len(committed ^ set(verdict.valid_ids()))} txs")
    return out


def verify_ledger_dump(records: list[dict]) -> list[str]:
    """Invariants recoverable from a JSON-lines ledger dump alone."""
    out = []
    prev = GENESIS_PREV_HASH
    seen: set[str] = set()
    for i, rec in enumerate(records):
        num = rec["block_num"]
        if num != i:
            out.append(f"block at line {i + 1} numbered {num}")
        if rec["prev_hash"] != prev:
            out.append(f"block {num}: broken prev_hash link")
        txs = rec["txs"]
        digest = block_digest(num, rec["prev_hash"], [t["digest"] for t in txs],
                              [t["order_flag"] for t in txs])
        if digest != rec["this_hash"]:
            out.append(f"block {num}: this_hash does not match content")
        prev = rec["this_hash"]
        for t in txs:
            if t["tx_id"] in seen:
                out.append(f"block {num}: {t['tx_id']} appears twice in the chain")
            seen.add(t["tx_id"])
            committed = t["vscc"] == Check.PASS.value and t["mvcc"] == Check.PASS.value
            if committed and t["order_flag"] == Check.FAIL.value:
                out.append(f"block {num}: {t['tx_id']} failed orderer MVCC but committed")
    return out


def compare_ledger_dumps(dumps: dict[str, list[dict]]) -> list[str]:
    """Replicas must agree block for block."""
    out = []
    names = sorted(dumps)
    ref = names[0]
    for name in names[1:]:
        a, b = dumps[ref], dumps[name]
        if len(a) != len(b):
            out.append(f"{name}: height {len(b)} != {ref} height {len(a)}")
        for x, y in zip(a, b):
            if x["this_hash"] != y["this_hash"]:
                out.append(f"{name}: block {y['block_num']} differs from {ref}")
                break
    return out
