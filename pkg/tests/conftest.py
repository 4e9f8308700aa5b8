from __future__ import annotations

import pytest

from eovsim import identity
from eovsim.config import ExperimentConfig
from eovsim.endorsement import Endorsement, EndorsementPolicy
from eovsim.ledger import Transaction


def make_tx(tx_id: str, rset: dict, wset: dict | None = None, *, signed: bool = False,
            peers=("peer-0",), client: str = "client-0") -> Transaction:
    """A bare envelope; ``wset`` defaults to writing every read key."""
    if wset is None:
        wset = {k: f"{tx_id}:{k}".encode() for k in rset}
    tx = Transaction(tx_id, client, None, dict(rset), dict(wset))
    if signed:
        tx.endorsements = tuple(Endorsement.create(p, tx_id, tx.rset, tx.wset) for p in peers)
        tx.client_tag = identity.sign(client, tx_id, [e.tag for e in tx.endorsements])
    return tx


def small(**overrides) -> ExperimentConfig:
    """A quick topology for unit-level simulation tests."""
    base = dict(clients=4, tx_per_client=40, hot_assets=4, cold_assets_per_client=10,
                interarrival_ms=20.0)
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture
def policy() -> EndorsementPolicy:
    return EndorsementPolicy(1, frozenset(f"peer-{i}" for i in range(4)))


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(n: int, ok: bool, detail: str) -> None:
        lines[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[n])
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
