"""Experiment configuration: flat ``key = value`` files plus overrides."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping

from .ledger import Mode
from .netsim import CostModel
from .workload import ConfigError, WorkloadConfig

ALL_MODES = (Mode.OG, Mode.OEMVCC, Mode.EA)


@dataclass
class RunConfig:
    """Everything one simulator instance needs."""

    mode: Mode = Mode.OG
    seed: int = 1
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    cost: CostModel = field(default_factory=CostModel)
    peers: int = 4
    orderers: int = 3
    gateways: int = 1
    block_size: int = 10
    block_interval_ms: float = 2000.0
    cache_capacity: int | None = 1024
    crash_at_ms: float | None = None
    bump_write_set: bool = False
    endorsement_required: int = 1
    endorsers_per_tx: int = 2
    endorse_timeout_ms: float = 1000.0
    warmup_fraction: float = 0.1

    def validate(self) -> None:
        self.workload.validate()
        if self.peers < self.endorsers_per_tx:
            raise ConfigError("peers", f"need at least {self.endorsers_per_tx} endorsing peers")
        if self.orderers < 1:
            raise ConfigError("orderers", "need at least one orderer")
        if self.crash_at_ms is not None and self.orderers < 2:
            raise ConfigError("crash_at_ms", "a leader crash needs a second orderer")
        if self.gateways < 1:
            raise ConfigError("gateways", "need at least one gateway")
        if self.block_size < 1:
            raise ConfigError("block_size", "must be at least 1")
        if self.block_interval_ms <= 0:
            raise ConfigError("block_interval_ms", "must be positive")
        if self.cache_capacity is not None and self.cache_capacity < 0:
            raise ConfigError("cache_capacity", "must be non-negative")
        if self.crash_at_ms is not None and self.crash_at_ms < 0:
            raise ConfigError("crash_at_ms", "must be non-negative")
        if not 1 <= self.endorsement_required <= self.endorsers_per_tx:
            raise ConfigError("endorsement_required",
                              f"must be between 1 and {self.endorsers_per_tx}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction", "must be in [0, 1)")
        if self.mode is Mode.EA and self.workload.malicious_fraction > 0:
            raise ConfigError("malicious_fraction",
                              "ea mode assumes no malicious clients; set it to 0")


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str) -> Any:
        if str(text).strip().lower() in ("", "none", "unbounded", "inf"):
            return None
        return conv(text)
    return parse


def _list(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: Any) -> list:
        if isinstance(text, (list, tuple)):
            return [conv(x) for x in text]
        return [conv(x) for x in str(text).replace(" ", "").split(",") if x]
    return parse


@dataclass
class ExperimentConfig:
    """A sweep over mode x conflict rate x seed."""

    mode: str = "all"
    conflict_rates: list[float] = field(default_factory=lambda: [0.2, 0.5, 0.8])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    clients: int = 10
    peers: int = 4
    orderers: int = 3
    gateways: int = 1
    block_size: int = 10
    block_interval_ms: float = 2000.0
    cache_capacity: int | None = 1024
    crash_at_ms: float | None = None
    hot_assets: int = 10
    cold_assets_per_client: int = 50
    interarrival_ms: float = 50.0
    tx_per_client: int = 100
    arrival: str = "fixed"
    malicious_fraction: float = 0.0
    warmup_fraction: float = 0.1
    endorsement_required: int = 1
    endorse_timeout_ms: float = 1000.0
    retry: bool = False
    bump_write_set: bool = False
    oracle: bool = False
    trace: bool = False
    dump: bool = False
    cost: CostModel = field(default_factory=CostModel)

    @property
    def modes(self) -> list[Mode]:
        if self.mode == "all":
            return list(ALL_MODES)
        return [Mode(self.mode)]

    def run_config(self, mode: Mode, rate: float, seed: int) -> RunConfig:
        workload = WorkloadConfig(
            clients=self.clients, hot_assets=self.hot_assets,
            cold_assets_per_client=self.cold_assets_per_client, conflict_rate=rate,
            tx_per_client=self.tx_per_client, interarrival_ms=self.interarrival_ms,
            arrival=self.arrival, malicious_fraction=self.malicious_fraction, retry=self.retry)
        return RunConfig(
            mode=mode, seed=seed, workload=workload, cost=replace(self.cost),
            peers=self.peers, orderers=self.orderers, gateways=self.gateways,
            block_size=self.block_size, block_interval_ms=self.block_interval_ms,
            cache_capacity=self.cache_capacity, crash_at_ms=self.crash_at_ms,
            bump_write_set=self.bump_write_set,
            endorsement_required=self.endorsement_required,
            endorse_timeout_ms=self.endorse_timeout_ms,
            warmup_fraction=self.warmup_fraction)

    def runs(self) -> Iterator[RunConfig]:
        for mode in self.modes:
            for rate in self.conflict_rates:
                for seed in self.seeds:
                    yield self.run_config(mode, rate, seed)

    def validate(self) -> None:
        if self.mode not in ("all", *(m.value for m in ALL_MODES)):
            raise ConfigError("mode", f"unknown mode {self.mode!r}")
        if not self.conflict_rates:
            raise ConfigError("conflict_rates", "empty")
        if not self.seeds:
            raise ConfigError("seeds", "empty")
        for rate in self.conflict_rates:
            if not 0.0 <= rate <= 1.0:
                raise ConfigError("conflict_rates", f"{rate} not in [0, 1]")
        for run in self.runs():
            run.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cost"] = asdict(self.cost)
        return d


_CONVERTERS: dict[str, Callable[[Any], Any]] = {
    "mode": str,
    "conflict_rates": _list(float),
    "seeds": _list(int),
    "clients": int,
    "peers": int,
    "orderers": int,
    "gateways": int,
    "block_size": int,
    "block_interval_ms": float,
    "cache_capacity": _opt(int),
    "crash_at_ms": _opt(float),
    "hot_assets": int,
    "cold_assets_per_client": int,
    "interarrival_ms": float,
    "tx_per_client": int,
    "arrival": str,
    "malicious_fraction": float,
    "warmup_fraction": float,
    "endorsement_required": int,
    "endorse_timeout_ms": float,
    "retry": _bool,
    "bump_write_set": _bool,
    "oracle": _bool,
    "trace": _bool,
    "dump": _bool,
}
COST_KEYS = set(CostModel.keys())
KNOWN_KEYS = set(_CONVERTERS) | COST_KEYS | {"conflict_rate"}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def apply_overrides(config: ExperimentConfig, values: Mapping[str, Any]) -> ExperimentConfig:
    cost_updates = {}
    for key, raw in values.items():
        if raw is None:
            continue
        if key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown configuration key")
        try:
            if key == "conflict_rate":
                config.conflict_rates = [float(raw)]
            elif key in COST_KEYS:
                cost_updates[key] = float(raw)
            else:
                setattr(config, key, _CONVERTERS[key](raw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"bad value {raw!r}: {exc}") from None
    if cost_updates:
        try:
            config.cost = replace(config.cost, **cost_updates)
        except ValueError as exc:
            raise ConfigError(next(iter(cost_updates)), str(exc)) from None
    return config


def parse_config(path: str | Path | None = None,
                 overrides: Mapping[str, Any] | None = None,
                 env: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then file values, then ``overrides``; then ``SIM_SEED``."""
    config = ExperimentConfig()
    if path is not None:
        apply_overrides(config, read_config_file(path))
    if overrides:
        apply_overrides(config, overrides)
    env = os.environ if env is None else env
    if env.get("SIM_SEED"):
        try:
            config.seeds = [int(env["SIM_SEED"])]
        except ValueError:
            raise ConfigError("SIM_SEED", f"not an integer: {env['SIM_SEED']!r}") from None
    config.validate()
    return config

