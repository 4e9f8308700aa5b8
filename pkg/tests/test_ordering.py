import pytest

from eovsim.ledger import Check, Mode, WorldState
from eovsim.messages import BlockBroadcast, InvalidNotify, OrderAck, PeerCacheMark, SubmitEnvelope
from eovsim.metrics import MetricsCollector
from eovsim.netsim import Engine, Node
from eovsim.oracle import serial_oracle
from eovsim.ordering import (LogEntry, OrderingService, VersionCache, apply_updates,
                             finalize_block, orderer_mvcc)

from conftest import make_tx

PEERS = [f"peer-{i}" for i in range(4)]


class Sink(Node):
    def __init__(self, node_id, role):
        super().__init__(node_id)
        self.role = role
        self.inbox = []

    def handle(self, msg, src):
        self.inbox.append((self.now, msg))

    def of(self, kind):
        return [m for _, m in self.inbox if isinstance(m, kind)]


def build(mode, **kw):
    eng = Engine(seed=1)
    metrics = MetricsCollector()
    svc = OrderingService(mode, ["orderer-0", "orderer-1", "orderer-2"], PEERS, metrics, **kw)
    for n in svc.members.values():
        eng.register(n)
    peers = [eng.register(Sink(p, "peer")) for p in PEERS]
    gw = eng.register(Sink("gw-0", "gateway"))
    return eng, svc, peers, gw, metrics


def submit(eng, metrics, tx, at=0.0, to="orderer-0"):
    metrics.register(tx.tx_id, "client-0", "hot", at)
    eng.schedule(to, SubmitEnvelope(tx.tx_id, tx, "gw-0"), at, src="gw-0")


# -- cache and check ---------------------------------------------------------

def test_stale_read_fails():
    cache = VersionCache()
    cache["a"] = 4
    assert orderer_mvcc(make_tx("t", {"a": 3}), cache) is None


def test_cache_miss_passes_and_bumps():
    cache = VersionCache()
    updates = orderer_mvcc(make_tx("t", {"a": 3}), cache)
    assert updates == [("a", 4)] and len(cache) == 0
    apply_updates(cache, updates)
    assert cache.snapshot() == {"a": 4}


def test_equal_version_passes():
    cache = VersionCache()
    cache["a"] = 3
    assert orderer_mvcc(make_tx("t", {"a": 3}), cache) == [("a", 4)]


def test_ordered_pair_matches_serial_oracle():
    txs = [make_tx("t1", {"a": 3}), make_tx("t2", {"a": 3})]
    cache = VersionCache()
    got = {}
    for tx in txs:
        updates = orderer_mvcc(tx, cache)
        got[tx.tx_id] = updates is not None
        apply_updates(cache, updates or ())
    assert got == serial_oracle(WorldState({"a": (b"x", 3)}), txs).valid
    assert got == {"t1": True, "t2": False}


def test_fifo_eviction_keeps_versions():
    cache = VersionCache(2)
    for k, v in (("a", 1), ("b", 2), ("c", 3)):
        cache[k] = v
    assert list(cache.hot) == ["b", "c"] and cache.cold == {"a": 1}
    assert cache["a"] == 1
    cache["a"] = 5
    assert cache.get("a") == 5 and "b" in cache.cold


def test_capacity_zero_is_all_cold():
    cache = VersionCache(0)
    cache["a"] = 2
    assert not cache.hot and cache["a"] == 2
    assert orderer_mvcc(make_tx("t", {"a": 1}), cache) is None


def test_bump_write_set_only_for_cached_blind_writes():
    cache = VersionCache()
    cache["b"] = 7
    tx = make_tx("t", {"a": 1}, {"a": b"1", "b": b"2", "c": b"3"})
    assert orderer_mvcc(tx, cache, bump_write_set=True) == [("a", 2), ("b", 8)]


def test_ea_finalize_drops_failures():
    txs = [make_tx(f"t{i}", {"a": 1}) for i in range(3)]
    txs[0].set_mvcc(True), txs[1].set_mvcc(False), txs[2].set_mvcc(True)
    assert [t.tx_id for t in finalize_block(txs, Mode.EA, 1, "0" * 64).txs] == ["t0", "t2"]
    assert len(finalize_block(txs, Mode.OEMVCC, 1, "0" * 64).txs) == 3


# -- block cutting ------------------------------------------------------------

def test_full_block_cut_immediately():
    eng, svc, peers, gw, metrics = build(Mode.OG)
    for i in range(10):
        submit(eng, metrics, make_tx(f"t{i}", {f"k{i}": 1}))
    eng.run_until()
    rec = svc.block_records[0]
    assert rec.n_ordered == 10 and rec.cut_time == 0.0
    assert len(peers[0].of(BlockBroadcast)) == 1


def test_under_full_block_cut_by_interval():
    eng, svc, peers, gw, metrics = build(Mode.OG)
    for i in range(3):
        submit(eng, metrics, make_tx(f"t{i}", {f"k{i}": 1}), at=float(i))
    eng.run_until()
    rec = svc.block_records[0]
    assert (rec.n_ordered, rec.first_pending, rec.cut_time) == (3, 0.0, 2000.0)
    assert len(gw.of(OrderAck)) == 3


def test_og_schedules_no_mvcc():
    eng, svc, peers, gw, metrics = build(Mode.OG)
    submit(eng, metrics, make_tx("t", {"a": 1}))
    eng.run_until()
    assert eng.total_service("mvcc") == 0
    assert svc.log[0].verdict is None


def test_follower_forwards_to_leader():
    eng, svc, peers, gw, metrics = build(Mode.OG)
    submit(eng, metrics, make_tx("t0", {"a": 1}), at=0.0, to="orderer-1")
    submit(eng, metrics, make_tx("t1", {"b": 1}), at=0.5, to="orderer-0")
    eng.run_until()
    assert [e.tx.tx_id for e in svc.log] == ["t1", "t0"]


def test_ea_block_prunes_oracle_failures():
    eng, svc, peers, gw, metrics = build(Mode.EA)
    # three hot keys read at the genesis version; repeats after the first fail
    keys = ["a", "b", "a", "c", "a", "b", "d", "e", "c", "f"]
    txs = [make_tx(f"t{i}", {k: 1}) for i, k in enumerate(keys)]
    for tx in txs:
        submit(eng, metrics, tx)
    eng.run_until()
    expected = serial_oracle(WorldState({k: (b"", 1) for k in set(keys)}), txs).valid
    n_fail = sum(not ok for ok in expected.values())
    assert n_fail == 4
    block = peers[0].of(BlockBroadcast)[0].block
    assert [t.tx_id for t in block.txs] == [t for t, ok in expected.items() if ok]
    assert len(gw.of(InvalidNotify)) == 4
    assert all(len(p.of(PeerCacheMark)) == 6 for p in peers)
    assert all(t.mvcc is Check.PASS for t in block.txs)


def test_broadcast_waits_for_mvcc_drain():
    eng, svc, peers, gw, metrics = build(Mode.OEMVCC)
    for i in range(10):
        submit(eng, metrics, make_tx(f"t{i}", {f"k{i}": 1}))
    eng.run_until()
    rec = svc.block_records[0]
    assert rec.cut_time == 0.0
    # ten checks of 0.5 ms, each pass followed by a 1 ms cache round trip
    assert rec.broadcast_time == pytest.approx(10 * 0.5 + 9 * 1.0)
    assert rec.broadcast_time - rec.cut_time <= rec.drain_bound


# -- replication and failover -------------------------------------------------

def test_pass_replicates_to_all_members():
    eng, svc, peers, gw, metrics = build(Mode.OEMVCC)
    submit(eng, metrics, make_tx("t", {"a": 3}))
    eng.run_until()
    assert all(m.cache.snapshot() == {"a": 4} for m in svc.members.values())


def test_fail_leaves_replicas_untouched():
    eng, svc, peers, gw, metrics = build(Mode.OEMVCC)
    for m in svc.members.values():
        m.cache["a"] = 5
    submit(eng, metrics, make_tx("t", {"a": 3}))
    eng.run_until()
    assert all(m.cache.snapshot() == {"a": 5} for m in svc.members.values())
    assert svc.log[0].verdict is False


def test_failover_with_nothing_unreplicated():
    eng, svc, peers, gw, metrics = build(Mode.OEMVCC)
    submit(eng, metrics, make_tx("t", {"a": 3}))
    eng.run_until()
    fo = svc.leader_failover("orderer-1")
    assert fo.replayed == {"orderer-0": 0, "orderer-1": 0, "orderer-2": 0}
    assert svc.members["orderer-1"].cache.snapshot() == {"a": 4}


def test_failover_replays_unreplicated_passes():
    eng, svc, peers, gw, metrics = build(Mode.OEMVCC)
    leader = svc.members["orderer-0"]
    for i, key in enumerate(["a", "b"]):
        tx = make_tx(f"t{i}", {key: 3})
        updates = orderer_mvcc(tx, leader.cache)
        apply_updates(leader.cache, updates)
        svc.log.append(LogEntry(i, tx, "gw-0", 0.0, True, tuple(updates), 0.0, 0))
    leader.applied = 2
    svc.crash("orderer-0")
    assert svc.leader == "orderer-1" and svc.term == 1
    reference = leader.cache.snapshot()
    for m in ("orderer-1", "orderer-2"):
        assert svc.members[m].cache.snapshot() == reference == {"a": 4, "b": 4}
    assert svc.failovers[0].replayed == {"orderer-1": 2, "orderer-2": 2}


def test_failover_requeues_unverdicted():
    eng, svc, peers, gw, metrics = build(Mode.OEMVCC)
    for i in range(3):
        submit(eng, metrics, make_tx(f"t{i}", {f"k{i}": 1}))
    eng.run_until(0.6)  # first check done, its cache round trip in flight
    fo = svc.leader_failover("orderer-1")
    assert fo.requeued == 2
    eng.run_until()
    assert set(svc.verdicts()) == {"t0", "t1", "t2"}
    snaps = {m: svc.members[m].cache.snapshot() for m in ("orderer-1", "orderer-2")}
    assert snaps["orderer-1"] == snaps["orderer-2"] == {"k0": 2, "k1": 2, "k2": 2}
    assert not svc.coherence_violations
