"""evpay: a DAG-ledger payment simulator for metered EV charging."""

from .scenario import Scenario, load_scenario
from .sim import RunResult, Simulation, inspect, replay, run, run_any, verify

__all__ = ["Scenario", "load_scenario", "RunResult", "Simulation", "run", "run_any",
           "verify", "replay", "inspect"]
__version__ = "0.1.0"
