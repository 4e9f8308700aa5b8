"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Runs are memoised so criteria that look at the same simulation share it.
"""

from __future__ import annotations

import random
import time
from functools import lru_cache

from eovsim import cli
from eovsim.config import ExperimentConfig
from eovsim.invariants import (check_block_discipline, check_chain, check_ea_purity,
                               check_monotonic, check_replication, check_run, check_service,
                               check_throughput, oracle_check)
from eovsim.ledger import Mode
from eovsim.oracle import diff_verdicts, serial_oracle
from eovsim.simulation import replay_order, run

SEEDS = (1, 2, 3, 4, 5)
N_CONFIGS = 20


def _random_configs() -> list[tuple[dict, float, int]]:
    """Twenty (overrides, rate, seed) triples, each 1000 transactions."""
    rng = random.Random(20240917)
    out = []
    for i in range(N_CONFIGS):
        clients = rng.choice([5, 10, 20])
        overrides = dict(
            clients=clients,
            tx_per_client=1000 // clients,
            hot_assets=rng.choice([5, 10, 20]),
            cold_assets_per_client=rng.choice([20, 50]),
            interarrival_ms=rng.choice([20.0, 50.0, 100.0]) * clients / 10,
            arrival=rng.choice(["fixed", "exponential"]),
            block_interval_ms=rng.choice([500.0, 2000.0]),
        )
        out.append((overrides, (0.2, 0.5, 0.8)[i % 3], rng.randrange(1, 10_000)))
    return out


CONFIGS = _random_configs()


@lru_cache(maxsize=None)
def _run(mode: Mode, rate: float, seed: int, extra: tuple = ()):
    cfg = ExperimentConfig(**dict(extra)).run_config(mode, rate, seed)
    t0 = time.perf_counter()
    result = run(cfg)
    result.wall_s = time.perf_counter() - t0
    return result


def random_run(i: int, mode: Mode):
    overrides, rate, seed = CONFIGS[i]
    return _run(mode, rate, seed, tuple(sorted(overrides.items())))


def default_run(mode: Mode, rate: float, seed: int, **extra):
    return _run(mode, rate, seed, tuple(sorted(extra.items())))


def every_run():
    """All simulations the acceptance gate looks at, in a fixed order."""
    runs = [random_run(i, m) for i in range(N_CONFIGS) for m in Mode]
    runs += [default_run(m, r, s) for m in Mode for r in (0.5, 0.8) for s in SEEDS]
    runs += [crash_run(m, s) for m in Mode for s in SEEDS]
    return runs


def crash_time(seed: int) -> float:
    """Midpoint of the no-crash run's submission phase."""
    base = default_run(Mode.OG, 0.5, seed)
    last_submit = max(r.submit for r in base.metrics.records.values())
    return round(last_submit / 2, 3) + 0.25


def crash_run(mode: Mode, seed: int):
    return default_run(mode, 0.5, seed, crash_at_ms=crash_time(seed))


def replay_mismatches(result) -> list[str]:
    """og and oemvcc must agree on the run's own order of envelopes."""
    order = result.ordering.ordered_txs()
    policy = result.reference_peer.policy
    og = replay_order(result.assets, order, Mode.OG, policy)
    oe = replay_order(result.assets, order, Mode.OEMVCC, policy,
                      cache_capacity=result.config.cache_capacity)
    out = diff_verdicts(og.valid, oe.valid)
    if og.digest != oe.digest:
        out.append("final state differs")
    return out


def ea_violations(result) -> list[str]:
    out = check_ea_purity(result.ordering.blocks)
    verdict = serial_oracle(result.genesis_state, result.ordering.ordered_txs())
    for tx_id in result.reference_peer.ledger.committed_tx_ids()[1:]:
        if not verdict.valid.get(tx_id):
            out.append(f"{tx_id} committed but invalid under the oracle")
    return out


def ledger_violations(result) -> list[str]:
    out = check_replication(result.peers)
    for p in result.peers:
        out += check_monotonic(p.ledger) + check_chain(p.ledger)
    return out


# -- criteria ---------------------------------------------------------------------

def test_c01_og_matches_serial_oracle(criterion):
    mismatches, slowest = 0, 0.0
    for i in range(N_CONFIGS):
        r = random_run(i, Mode.OG)
        assert r.summary.submitted == 1000
        mismatches += len(oracle_check(r))
        slowest = max(slowest, r.wall_s)
    ok = mismatches == 0 and slowest < 10.0
    criterion(1, ok, f"{N_CONFIGS} og configs x 1000 txs, {mismatches} oracle mismatches, "
                     f"slowest run {slowest:.2f} s")
    assert ok


def test_c02_oemvcc_equals_og_on_same_order(criterion):
    bad = 0
    for i in range(N_CONFIGS):
        for mode in (Mode.OG, Mode.OEMVCC):
            bad += len(replay_mismatches(random_run(i, mode)))
    criterion(2, bad == 0, f"{2 * N_CONFIGS} orders replayed through og and oemvcc, "
                           f"{bad} mismatches")
    assert bad == 0


def test_c03_ea_purity(criterion):
    bad = sum(len(ea_violations(random_run(i, Mode.EA))) for i in range(N_CONFIGS))
    blocks = sum(len(random_run(i, Mode.EA).ordering.blocks) for i in range(N_CONFIGS))
    criterion(3, bad == 0, f"{N_CONFIGS} ea configs, {blocks} blocks, {bad} violations")
    assert bad == 0


def test_c04_monotonic_versions_and_replication(criterion):
    runs = every_run()
    problems = [v for r in runs for v in ledger_violations(r)]
    criterion(4, not problems, f"{len(runs)} runs in all modes, {len(problems)} violations")
    assert not problems, problems[:5]


def test_c05_block_discipline(criterion):
    runs = every_run()
    problems = [v for r in runs for v in check_block_discipline(
        r.ordering, r.config.block_size, r.config.block_interval_ms)]
    largest = max(rec.n_ordered for r in runs for rec in r.ordering.block_records)
    ok = not problems and largest <= 10
    criterion(5, ok, f"{len(runs)} runs, largest block {largest}, {len(problems)} violations")
    assert ok, problems[:5]


def test_c06_invalid_latency_ordering(criterion):
    failures = []
    for rate in (0.5, 0.8):
        for seed in SEEDS:
            lat = {m: default_run(m, rate, seed).summary.latency["invalid"].mean for m in Mode}
            if not lat[Mode.EA] < lat[Mode.OEMVCC] < lat[Mode.OG]:
                failures.append(f"rate {rate} seed {seed}: {lat}")
    worst = max(default_run(Mode.EA, r, s).summary.latency["invalid"].mean
                / default_run(Mode.OEMVCC, r, s).summary.latency["invalid"].mean
                for r in (0.5, 0.8) for s in SEEDS)
    criterion(6, not failures, f"ea < oemvcc < og in {10 - len(failures)}/10 cells, "
                               f"largest ea/oemvcc ratio {worst:.2f}")
    assert not failures, failures


def test_c07_peer_service_time(criterion):
    problems = []
    for seed in SEEDS:
        for mode in (Mode.OEMVCC, Mode.EA):
            for rate in (0.5, 0.8):
                problems += check_service(default_run(mode, rate, seed).engine, mode)
        ea = default_run(Mode.EA, 0.8, seed).engine.total_service("endorse")
        oe = default_run(Mode.OEMVCC, 0.8, seed).engine.total_service("endorse")
        if not ea < oe:
            problems.append(f"seed {seed}: ea endorse {ea} ms not below oemvcc {oe} ms")
    criterion(7, not problems, f"peer mvcc/vscc service checks over {len(SEEDS)} seeds, "
                               f"{len(problems)} violations")
    assert not problems, problems


def test_c08_throughput_cross_count(criterion):
    runs = every_run()
    problems = [v for r in runs for v in check_throughput(r.summary, r.engine.trace)]
    criterion(8, not problems, f"{len(runs)} runs cross-counted against the event trace, "
                               f"{len(problems)} mismatches")
    assert not problems, problems[:5]


def _stressed_crash(mode: Mode, seed: int):
    return default_run(mode, 0.8, seed, interarrival_ms=10.0, crash_at_ms=300.0 + seed * 0.35)


def _pre_crash_changes(crashed, baseline, t_crash: float) -> list[str]:
    out = []
    before = {t: rec.status for t, rec in crashed.metrics.records.items()
              if rec.verdict is not None and rec.verdict < t_crash}
    for t, status in before.items():
        if baseline.metrics.records[t].status != status:
            out.append(f"{t}: {baseline.metrics.records[t].status} -> {status}")
    base_v = baseline.ordering.verdicts()
    for e in crashed.ordering.log:
        if e.verdict_time is not None and e.verdict_time < t_crash:
            if base_v.get(e.tx.tx_id) != e.verdict:
                out.append(f"{e.tx.tx_id}: orderer verdict flipped")
    return out


def test_c09_failover_safety(criterion):
    problems, stable = [], 0
    for seed in SEEDS:
        t = crash_time(seed)
        for mode in Mode:
            r = crash_run(mode, seed)
            assert r.ordering.failovers, "crash never happened"
            problems += check_run(r) + oracle_check(r)
            problems += replay_mismatches(r) + ledger_violations(r)
            if mode is Mode.EA:
                problems += ea_violations(r)
            changes = _pre_crash_changes(r, default_run(mode, 0.5, seed), t)
            problems += changes
            stable += not changes
    exercised = 0
    for seed in SEEDS:
        for mode in (Mode.OEMVCC, Mode.EA):
            r = _stressed_crash(mode, seed)
            problems += check_run(r) + oracle_check(r) + replay_mismatches(r)
            fo = r.ordering.failovers[0]
            exercised += bool(fo.requeued or any(fo.replayed.values()))
    ok = not problems and exercised > 0
    criterion(9, ok, f"{len(SEEDS)} seeds x 3 modes crashed mid-run, {stable}/15 with "
                     f"unchanged pre-crash verdicts; {exercised}/10 loaded crashes hit "
                     f"replay or requeue; {len(problems)} violations")
    assert ok, problems[:5]


def test_c10_determinism(criterion, tmp_path, monkeypatch):
    monkeypatch.delenv("SIM_SEED", raising=False)
    args = ["run", "--seeds", "2", "--conflict-rates", "0.5,0.8", "--trace"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main([*args, "--out", str(tmp_path / "b")]) == cli.EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    differing = [n for n in names
                 if (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / n).read_bytes()]
    traces = sum(n.startswith("trace-") for n in names)
    ok = not differing and traces == 6 and "results.csv" in names
    criterion(10, ok, f"{len(names)} report files incl. {traces} traces, "
                      f"{len(differing)} differ between identical runs")
    assert ok, differing


def test_c11_cache_capacity_independence(criterion):
    mismatches = evicted = 0
    for seed in SEEDS:
        for mode in (Mode.OEMVCC, Mode.EA):
            ref = default_run(mode, 0.8, seed, cache_capacity=None).ordering.verdicts()
            for cap in (0, 1, 64):
                r = default_run(mode, 0.8, seed, cache_capacity=cap)
                mismatches += len(diff_verdicts(ref, r.ordering.verdicts()))
                evicted += bool(r.ordering.leader_node.cache.cold)
    ok = mismatches == 0 and evicted == 30
    criterion(11, ok, f"capacities 0/1/64/unbounded over {len(SEEDS)} seeds, "
                      f"{mismatches} verdict mismatches")
    assert ok
