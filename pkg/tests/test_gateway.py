import pytest

from eovsim.endorsement import Endorsement
from eovsim.gateway import (EndorsementMismatch, Gateway, InsufficientEndorsements,
                            collect_endorsements, gateway_vscc)
from eovsim.ledger import Mode
from eovsim.messages import (ClientStatus, CommitNotify, EndorseReply, EnvelopeReady,
                             InvalidNotify, Propose, SubmitEnvelope)
from eovsim.metrics import COMMITTED, INVALID_MVCC, INVALID_VSCC, MetricsCollector
from eovsim.netsim import Engine, Node
from eovsim.workload import Proposal

from conftest import make_tx

PROP = Proposal("client-0", "a", 0)


class Sink(Node):
    def __init__(self, node_id, role):
        super().__init__(node_id)
        self.role = role
        self.inbox = []

    def handle(self, msg, src):
        self.inbox.append((self.now, msg))


def reply(peer, version=1, value=b"v"):
    return EndorseReply(PROP.tx_id, peer,
                        endorsement=Endorsement.create(peer, PROP.tx_id, {"a": version},
                                                       {"a": value}))


@pytest.fixture
def net(policy):
    eng = Engine(seed=1)
    metrics = MetricsCollector()
    client = eng.register(Sink("client-0", "client"))
    orderer = eng.register(Sink("orderer-0", "orderer"))
    for i in range(2):
        eng.register(Sink(f"peer-{i}", "peer"))
    eng.register(Sink("gwpeer-0", "peer"))

    def make(mode=Mode.OG):
        gw = eng.register(Gateway("gw-0", "gwpeer-0", mode, policy, lambda: ["orderer-0"],
                                  metrics))
        return gw
    return eng, metrics, client, orderer, make


def statuses(client):
    return [m.status for _, m in client.inbox if isinstance(m, ClientStatus)]


def test_collect_consistent_endorsements(policy):
    replies = {"peer-0": reply("peer-0"), "peer-1": reply("peer-1")}
    env = collect_endorsements(PROP, replies, policy)
    assert env.rset == {"a": 1} and len(env.endorsements) == 2


def test_collect_disagreeing_endorsements(policy):
    replies = {"peer-0": reply("peer-0", 1), "peer-1": reply("peer-1", 2)}
    with pytest.raises(EndorsementMismatch):
        collect_endorsements(PROP, replies, policy)


def test_collect_with_no_endorsements(policy):
    replies = {"peer-0": EndorseReply(PROP.tx_id, "peer-0", early_invalid="a")}
    with pytest.raises(InsufficientEndorsements):
        collect_endorsements(PROP, replies, policy)


def test_gateway_vscc_cases(policy):
    assert gateway_vscc(make_tx("t", {"a": 1}, signed=True), policy)
    forged = make_tx("t", {"a": 1}, signed=True)
    forged.wset = {"a": b"stolen"}
    assert not gateway_vscc(forged, policy)
    assert not gateway_vscc(make_tx("t", {"a": 1}), policy)


def test_envelope_built_after_all_replies(net):
    eng, metrics, client, _, make = net
    gw = make()
    metrics.register(PROP.tx_id, "client-0", "hot", 0.0)
    eng.schedule("gw-0", Propose(PROP.tx_id, PROP, ("peer-0", "peer-1")), src="client-0")
    eng.schedule("gw-0", reply("peer-0"), 1.0)
    eng.schedule("gw-0", reply("peer-1"), 2.0)
    eng.run_until(5.0)
    ready = [m for _, m in client.inbox if isinstance(m, EnvelopeReady)]
    assert len(ready) == 1 and ready[0].envelope.rset == {"a": 1}
    assert gw.pending[PROP.tx_id].resolved


def test_ea_early_invalid_notifies_without_envelope(net):
    eng, metrics, client, _, make = net
    make(Mode.EA)
    metrics.register(PROP.tx_id, "client-0", "hot", 0.0)
    eng.schedule("gw-0", Propose(PROP.tx_id, PROP, ("peer-0", "peer-1")), src="client-0")
    eng.schedule("gw-0", EndorseReply(PROP.tx_id, "peer-0", early_invalid="a"), 1.0)
    eng.schedule("gw-0", reply("peer-1"), 2.0)
    eng.run_until(5.0)
    assert statuses(client) == [INVALID_MVCC]
    assert not any(isinstance(m, EnvelopeReady) for _, m in client.inbox)
    assert metrics.counters["early_invalid"] == 1


def test_forged_envelope_fails_gateway_vscc(net):
    eng, metrics, client, orderer, make = net
    make()
    tx = make_tx(PROP.tx_id, {"a": 1}, signed=True)
    tx.wset = {"a": b"stolen"}
    eng.schedule("gw-0", Propose(PROP.tx_id, PROP, ("peer-0", "peer-1")), src="client-0")
    eng.schedule("gw-0", SubmitEnvelope(tx.tx_id, tx, "gw-0"), 1.0)
    eng.run_until(1000.0)
    assert INVALID_VSCC in statuses(client)
    assert orderer.inbox == []


def test_first_notification_wins(net):
    eng, metrics, client, _, make = net
    gw = make(Mode.OEMVCC)
    eng.schedule("gw-0", Propose(PROP.tx_id, PROP, ("peer-0", "peer-1")), src="client-0")
    eng.schedule("gw-0", InvalidNotify(PROP.tx_id, INVALID_MVCC), 3.0)
    eng.schedule("gw-0", CommitNotify(PROP.tx_id), 4.0)
    eng.run_until(10.0)
    assert statuses(client) == [INVALID_MVCC]
    assert gw.suppressed == 1


def test_unknown_tx_notification_dropped(net):
    eng, metrics, client, _, make = net
    make()
    eng.schedule("gw-0", CommitNotify("nobody-0"))
    eng.run_until()
    assert client.inbox == [] and metrics.counters["unknown_notifications"] == 1


def test_latency_is_notify_minus_submit():
    m = MetricsCollector()
    m.register("t", "client-0", "cold", 10.0)
    m.terminal("t", COMMITTED, 72.5)
    assert m.records["t"].latency == 62.5
