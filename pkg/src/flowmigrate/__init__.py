"""flowmigrate: a deterministic simulator of elastic dataflow migration.

Runs a miniature stream-processing cluster on a virtual clock and compares
three task-migration strategies (DSM, DCR, CCR) for reliability and timing.
"""

from ._kernels import active_backend
from .metrics import MetricsReport, Timeline, compute_report, exactly_once_audit
from .model import (
    DagDef,
    ScenarioConfig,
    Schedule,
    TaskDef,
    VmDef,
    load_bundled_dag,
    load_bundled_scenario,
    parse_scenario,
    resolve_scenario,
    round_robin_placement,
    validate_dag,
)
from .runtime import SimulationEngine, run_scenario

__version__ = "0.1.0"

__all__ = [
    "DagDef",
    "MetricsReport",
    "ScenarioConfig",
    "Schedule",
    "SimulationEngine",
    "TaskDef",
    "Timeline",
    "VmDef",
    "active_backend",
    "compute_report",
    "exactly_once_audit",
    "load_bundled_dag",
    "load_bundled_scenario",
    "parse_scenario",
    "resolve_scenario",
    "round_robin_placement",
    "run_scenario",
    "validate_dag",
    "__version__",
]
