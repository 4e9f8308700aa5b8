"""Discrete-event simulator of an execute-order-validate permissioned ledger."""

from .config import ExperimentConfig, RunConfig, parse_config
from .ledger import Mode
from .oracle import serial_oracle
from .simulation import Simulation, replay_order, run

__all__ = ["ExperimentConfig", "Mode", "RunConfig", "Simulation", "parse_config",
           "replay_order", "run", "serial_oracle"]
__version__ = "0.1.0"
