"""Command-line entry point: ``eovsim run | oracle | verify``."""

from __future__ import annotations

import argparse
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import _CONVERTERS, ExperimentConfig, RunConfig, _bool, parse_config
from .invariants import check_run, compare_ledger_dumps, oracle_check, verify_ledger_dump
from .ledger import Mode, dump_ledger, load_ledger_dump
from .metrics import RunSummary, export
from .oracle import diff_verdicts, read_order_dump, serial_oracle, write_order_dump
from .simulation import run as run_simulation
from .workload import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_ORACLE = 4

REPORT_HEADER = {
    "offered_load": "each client submits one proposal every interarrival_ms "
                    "(open loop, staggered start)",
    "duration": "tx_per_client proposals per client; each run continues until "
                "every event has drained",
    "warmup": "the first warmup_fraction of txs by submit time are left out of "
              "latency and execution-duration statistics",
    "window": "throughput window runs from the first measured submission to the "
              "last client notification",
    "throughput": "terminal notifications inside the window divided by its length",
    "stddev": "per-run rows carry within-run sample stddev; results.json and the "
              "fig*.dat files carry across-seed mean and stddev",
    "cache_capacity": "hot-tier size of the orderer version cache; evicted entries "
                      "move to an unbounded persistent tier",
}


@dataclass
class RunOutcome:
    mode: str
    conflict_rate: float
    seed: int
    summary: RunSummary | None
    violations: list[str] = field(default_factory=list)
    mismatches: list[str] = field(default_factory=list)
    trace: str | None = None
    ledger_dump: str | None = None
    order_dump: str | None = None

    @property
    def label(self) -> str:
        return f"{self.mode}-{self.conflict_rate:g}-{self.seed}"


def execute(cfg: RunConfig, oracle: bool = False, trace: bool = False,
            dump: bool = False) -> RunOutcome:
    """Run one (mode, rate, seed) cell and check it."""
    result = run_simulation(cfg)
    out = RunOutcome(cfg.mode.value, cfg.workload.conflict_rate, cfg.seed, result.summary)
    out.violations = check_run(result)
    if oracle:
        out.mismatches = oracle_check(result)
    if trace:
        buf = io.StringIO()
        result.engine.write_trace(buf)
        out.trace = buf.getvalue()
    if dump:
        buf = io.StringIO()
        dump_ledger(result.reference_peer.ledger, buf)
        out.ledger_dump = buf.getvalue()
        buf = io.StringIO()
        write_order_dump(result.genesis_state, _order_entries(result), buf)
        out.order_dump = buf.getvalue()
    return out


def _order_entries(result):
    """The order the MVCC referee should see, with the verdict it got."""
    if result.config.mode is Mode.OG:
        skip = result.peer_vscc_failed()
        valid = result.peer_valid()
        return [(tx, valid[tx.tx_id]) for tx in result.ordering.ordered_txs()
                if tx.tx_id not in skip and tx.tx_id in valid]
    verdicts = result.ordering.verdicts()
    return [(tx, verdicts[tx.tx_id]) for tx in result.ordering.ordered_txs()
            if tx.tx_id in verdicts]


def _execute_star(args) -> RunOutcome:
    return execute(*args)


def run_experiment(config: ExperimentConfig, outdir: str | Path, jobs: int = 1,
                   log=sys.stderr) -> int:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, config.oracle, config.trace, config.dump) for cfg in config.runs()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_execute_star, tasks))
    else:
        outcomes = [_execute_star(t) for t in tasks]

    code = EXIT_OK
    for o in outcomes:
        s = o.summary
        status = "ok"
        if o.violations:
            status = f"{len(o.violations)} invariant violations"
            code = max(code, EXIT_INVARIANT)
        if o.mismatches:
            status = f"{len(o.mismatches)} oracle mismatches"
            code = EXIT_ORACLE
        counts = (f"committed={s.committed} invalid={s.invalid} "
                  f"rejected={s.rejected_at_gateway}" if s else "no transactions")
        print(f"{o.mode} rate={o.conflict_rate:g} seed={o.seed} {counts} {status}", file=log)
        for line in (o.violations + o.mismatches)[:10]:
            print(f"  [{o.mode} {o.conflict_rate:g} {o.seed}] {line}", file=log)
        if o.trace is not None:
            (outdir / f"trace-{o.label}.jsonl").write_text(o.trace, encoding="utf-8")
        if o.ledger_dump is not None:
            (outdir / f"ledger-{o.label}.jsonl").write_text(o.ledger_dump, encoding="utf-8")
            (outdir / f"order-{o.label}.jsonl").write_text(o.order_dump, encoding="utf-8")

    summaries = [o.summary for o in outcomes if o.summary is not None]
    if summaries:
        export(summaries, outdir, config=config.to_dict(), header=REPORT_HEADER)
    return code


def cmd_run(args) -> int:
    overrides = {}
    for key in _CONVERTERS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    config = parse_config(args.config, overrides)
    return run_experiment(config, args.out, args.jobs)


def cmd_oracle(args) -> int:
    with open(args.dump, encoding="utf-8") as fp:
        genesis, txs, recorded = read_order_dump(fp)
    verdict = serial_oracle(genesis, txs)
    diff = diff_verdicts(verdict.valid, recorded)
    for line in diff[:20]:
        print(line)
    print(f"{len(txs)} txs refereed, {len(diff)} mismatches")
    return EXIT_ORACLE if diff else EXIT_OK


def cmd_verify(args) -> int:
    dumps = {}
    problems = []
    for path in args.dumps:
        with open(path, encoding="utf-8") as fp:
            dumps[path] = load_ledger_dump(fp)
        problems += [f"{path}: {p}" for p in verify_ledger_dump(dumps[path])]
    if len(dumps) > 1:
        problems += compare_ledger_dumps(dumps)
    for line in problems[:50]:
        print(line)
    blocks = sum(len(d) for d in dumps.values())
    print(f"{len(dumps)} dumps, {blocks} blocks, {len(problems)} violations")
    return EXIT_INVARIANT if problems else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eovsim",
                                     description="Execute-order-validate ledger simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="sweep mode x conflict rate x seed")
    run.add_argument("--config", help="key = value configuration file")
    run.add_argument("--out", default="results", help="report directory (default: results)")
    run.add_argument("--jobs", type=int, default=1, help="parallel runs (default: 1)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any configuration key, including cost-model keys")
    for key, conv in _CONVERTERS.items():
        flag = "--" + key.replace("_", "-")
        if conv is _bool:
            run.add_argument(flag, dest=key, action="store_const", const="true")
        else:
            run.add_argument(flag, dest=key, metavar="VALUE")
    run.set_defaults(func=cmd_run)

    orc = sub.add_parser("oracle", help="re-referee an order dump")
    orc.add_argument("dump")
    orc.set_defaults(func=cmd_oracle)

    ver = sub.add_parser("verify", help="check ledger dumps")
    ver.add_argument("dumps", nargs="+")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
