"""Per-transaction timing records, run summaries and report export."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

COMMITTED = "committed"
INVALID_MVCC = "invalid_mvcc"
INVALID_VSCC = "invalid_vscc"
REJECTED = "rejected"
TERMINAL = (COMMITTED, INVALID_MVCC, INVALID_VSCC, REJECTED)

CSV_COLUMNS = ["mode", "conflict_rate", "seed", "metric", "class", "mean", "stddev", "n"]


class UnknownTx(KeyError):
    pass


class EmptyWindow(ValueError):
    pass


@dataclass
class TxRecord:
    tx_id: str
    client_id: str
    conflict: str  # "hot" or "cold"
    submit: float
    endorse_done: float | None = None
    order_ack: float | None = None
    verdict: float | None = None
    notify: float | None = None
    status: str | None = None
    retry_of: str | None = None
    # (peer_id, start, done) per endorsement reply; early-invalid has done == start
    endorsements: list[tuple[str, float, float]] = field(default_factory=list)

    @property
    def latency(self) -> float | None:
        return None if self.notify is None else self.notify - self.submit

    @property
    def valid(self) -> bool:
        return self.status == COMMITTED


class MetricsCollector:
    def __init__(self) -> None:
        self.records: dict[str, TxRecord] = {}
        self.protocol_errors: list[str] = []
        self.counters: dict[str, int] = {}

    def bump(self, name: str, by: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + by

    def register(self, tx_id: str, client_id: str, conflict: str, time: float,
                 retry_of: str | None = None) -> TxRecord:
        if tx_id in self.records:
            raise ValueError(f"tx {tx_id} registered twice")
        rec = TxRecord(tx_id, client_id, conflict, time, retry_of=retry_of)
        self.records[tx_id] = rec
        return rec

    def _get(self, tx_id: str) -> TxRecord:
        try:
            return self.records[tx_id]
        except KeyError:
            raise UnknownTx(tx_id) from None

    def record(self, kind: str, tx_id: str, time: float) -> None:
        """Store a non-terminal timestamp; the first value for a kind sticks."""
        if kind not in ("endorse_done", "order_ack", "verdict"):
            raise ValueError(f"unknown record kind {kind!r}")
        rec = self._get(tx_id)
        if getattr(rec, kind) is None:
            setattr(rec, kind, time)

    def endorsement(self, tx_id: str, peer_id: str, start: float, done: float) -> None:
        self._get(tx_id).endorsements.append((peer_id, start, done))

    def terminal(self, tx_id: str, status: str, time: float) -> bool:
        if status not in TERMINAL:
            raise ValueError(f"unknown status {status!r}")
        rec = self._get(tx_id)
        if rec.status is not None:
            self.protocol_errors.append(
                f"{tx_id}: second terminal event {status} after {rec.status}")
            return False
        rec.status = status
        rec.notify = time
        return True


@dataclass
class Stat:
    mean: float | None
    stddev: float | None
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> Stat:
        values = list(values)
        if not values:
            return cls(None, None, 0)
        sd = statistics.stdev(values) if len(values) > 1 else None
        return cls(statistics.fmean(values), sd, len(values))


@dataclass
class RunSummary:
    mode: str
    conflict_rate: float
    seed: int
    window: tuple[float, float]
    submitted: int
    committed: int
    invalid: int
    rejected_at_gateway: int
    in_flight: int
    latency: dict[str, Stat]
    exec_duration: Stat
    throughput: dict[str, float]
    notifications: dict[str, int]

    @property
    def total(self) -> int:
        return self.committed + self.invalid


def _window_for(records: list[TxRecord],
                warmup: float) -> tuple[list[TxRecord], tuple[float, float]]:
    ordered = sorted(records, key=lambda r: (r.submit, r.tx_id))
    skip = int(math.floor(len(ordered) * warmup))
    measured = ordered[skip:]
    if not measured:
        raise EmptyWindow("no transactions after warm-up")
    notified = [r.notify for r in records if r.notify is not None]
    if not notified:
        raise EmptyWindow("no notifications")
    return measured, (measured[0].submit, max(notified))


def summarize(records: Iterable[TxRecord], *, mode: str = "", conflict_rate: float = 0.0,
              seed: int = 0, warmup: float = 0.1,
              window: tuple[float, float] | None = None) -> RunSummary:
    """Reduce per-tx records to the three headline measures.

    Throughput counts every terminal notification inside the window; the
    latency and execution-duration statistics skip the warm-up prefix.
    """
    records = list(records)
    if not records:
        raise EmptyWindow("no records")
    if window is None:
        measured, window = _window_for(records, warmup)
    else:
        measured = sorted(records, key=lambda r: (r.submit, r.tx_id))
    start, end = window
    span_s = (end - start) / 1000.0
    if span_s <= 0:
        raise EmptyWindow(f"window {window} has no extent")

    done = [r for r in measured if r.status is not None]
    latency = {
        "overall": Stat.of([r.latency for r in done]),
        "valid": Stat.of([r.latency for r in done if r.valid]),
        "invalid": Stat.of([r.latency for r in done if not r.valid]),
    }
    exec_duration = Stat.of([d - s for r in measured for _, s, d in r.endorsements])

    in_window = [r for r in records if r.notify is not None and start <= r.notify <= end]
    counts = {
        "overall": len(in_window),
        "valid": sum(1 for r in in_window if r.valid),
        "invalid": sum(1 for r in in_window if not r.valid),
    }
    throughput = {k: v / span_s for k, v in counts.items()}

    statuses = [r.status for r in records]
    return RunSummary(
        mode=mode,
        conflict_rate=conflict_rate,
        seed=seed,
        window=(start, end),
        submitted=len(records),
        committed=statuses.count(COMMITTED),
        invalid=statuses.count(INVALID_MVCC) + statuses.count(INVALID_VSCC),
        rejected_at_gateway=statuses.count(REJECTED),
        in_flight=statuses.count(None),
        latency=latency,
        exec_duration=exec_duration,
        throughput=throughput,
        notifications=counts,
    )


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def summary_rows(s: RunSummary) -> list[dict[str, str]]:
    base = {"mode": s.mode, "conflict_rate": f"{s.conflict_rate:g}", "seed": str(s.seed)}
    rows = []
    for cls, st in s.latency.items():
        rows.append({**base, "metric": "latency_ms", "class": cls,
                     "mean": _fmt(st.mean), "stddev": _fmt(st.stddev), "n": str(st.n)})
    st = s.exec_duration
    rows.append({**base, "metric": "exec_duration_ms", "class": "all",
                 "mean": _fmt(st.mean), "stddev": _fmt(st.stddev), "n": str(st.n)})
    for cls, value in s.throughput.items():
        rows.append({**base, "metric": "throughput_tps", "class": cls,
                     "mean": _fmt(value), "stddev": "", "n": str(s.notifications[cls])})
    return rows


def summary_to_dict(s: RunSummary) -> dict:
    d = asdict(s)
    d["window"] = list(s.window)
    return d


def aggregate(summaries: Sequence[RunSummary]) -> list[dict]:
    """Across-seed mean and sample stddev of each per-run figure."""
    groups: dict[tuple[str, float], list[RunSummary]] = {}
    for s in summaries:
        groups.setdefault((s.mode, s.conflict_rate), []).append(s)

    def across(values: list[float | None]) -> Stat:
        return Stat.of([v for v in values if v is not None])

    out = []
    for (mode, rate), group in groups.items():
        row = {"mode": mode, "conflict_rate": rate, "seeds": len(group)}
        row["exec_duration_ms"] = asdict(across([g.exec_duration.mean for g in group]))
        for cls in ("overall", "valid", "invalid"):
            row[f"latency_ms_{cls}"] = asdict(across([g.latency[cls].mean for g in group]))
            row[f"throughput_tps_{cls}"] = asdict(across([g.throughput[cls] for g in group]))
        out.append(row)
    return out


def _dat(agg: list[dict], columns: list[str], title: str) -> str:
    lines = [f"# {title}", "# mode conflict_rate " + " ".join(
        f"{c}_mean {c}_std" for c in columns)]
    for row in agg:
        cells = [row["mode"], f"{row['conflict_rate']:g}"]
        for c in columns:
            cells += [_fmt(row[c]["mean"]) or "nan", _fmt(row[c]["stddev"]) or "nan"]
        lines.append(" ".join(cells))
    return "\n".join(lines) + "\n"


def render_csv(summaries: Sequence[RunSummary]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for s in summaries:
        writer.writerows(summary_rows(s))
    return buf.getvalue()


def export(summaries: Sequence[RunSummary], outdir: str | Path,
           config: dict | None = None, header: dict | None = None) -> dict[str, Path]:
    """Write results.csv, results.json and fig4/5/6.dat into ``outdir``."""
    if not summaries:
        raise ValueError("nothing to export")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    agg = aggregate(summaries)
    files = {
        "results.csv": render_csv(summaries),
        "results.json": json.dumps({
            "header": header or {},
            "config": config or {},
            "rows": [r for s in summaries for r in summary_rows(s)],
            "runs": [summary_to_dict(s) for s in summaries],
            "aggregate": agg,
        }, indent=2, sort_keys=True) + "\n",
        "fig4.dat": _dat(agg, ["exec_duration_ms"], "execution duration vs conflict rate"),
        "fig5.dat": _dat(agg, [f"latency_ms_{c}" for c in ("overall", "valid", "invalid")],
                         "latency vs conflict rate"),
        "fig6.dat": _dat(agg, [f"throughput_tps_{c}" for c in ("overall", "valid", "invalid")],
                         "throughput vs conflict rate"),
    }
    paths = {}
    for name, text in files.items():
        path = outdir / name
        path.write_text(text, encoding="utf-8")
        paths[name] = path
    return paths
