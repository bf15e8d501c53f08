"""Dataflow topologies, cluster resources, schedules and scenario configs.

Everything here is plain data plus pure functions: safe to share read-only
between engines.  Scenario documents are JSON with the field names used by
the dataclasses below; DAGs may be embedded inline or referenced by the
name of a bundled topology file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .errors import ConfigError, InsufficientSlotsError

DUPLICATE = "DUPLICATE"
SHUFFLE = "SHUFFLE"
GROUPINGS = (DUPLICATE, SHUFFLE)

STRATEGIES = ("DSM", "DCR", "CCR")

# One task instance is provisioned per this many events/sec of input.
DEFAULT_RATE_PER_INSTANCE = 8.0


def instance_id(task_id: str, ordinal: int) -> str:
    return f"{task_id}#{ordinal}"


@dataclass(frozen=True)
class TaskDef:
    """One logical task of the dataflow; may run as several instances."""

    taskId: str
    name: str = ""
    serviceTimeMs: int = 100
    selectivity: float = 1.0
    stateful: bool = False
    instanceCount: int = 1

    def instance_ids(self) -> list[str]:
        return [instance_id(self.taskId, i) for i in range(self.instanceCount)]


@dataclass(frozen=True)
class Edge:
    fromTask: str
    toTask: str
    grouping: str = SHUFFLE


@dataclass(frozen=True)
class DagDef:
    """Directed acyclic dataflow with pseudo source and sink tasks."""

    name: str
    tasks: tuple[TaskDef, ...]
    edges: tuple[Edge, ...]
    sourceTasks: tuple[str, ...]
    sinkTasks: tuple[str, ...]

    def task(self, task_id: str) -> TaskDef:
        for t in self.tasks:
            if t.taskId == task_id:
                return t
        raise KeyError(task_id)

    def user_tasks(self) -> list[TaskDef]:
        """Tasks that do real work: everything except sources and sinks."""
        endpoints = set(self.sourceTasks) | set(self.sinkTasks)
        return [t for t in self.tasks if t.taskId not in endpoints]

    def out_edges(self, task_id: str) -> list[Edge]:
        return [e for e in self.edges if e.fromTask == task_id]

    def in_edges(self, task_id: str) -> list[Edge]:
        return [e for e in self.edges if e.toTask == task_id]

    def topological_order(self) -> list[str]:
        """Kahn topological order, stable w.r.t. the declared task order."""
        order: list[str] = []
        indegree = {t.taskId: len(self.in_edges(t.taskId)) for t in self.tasks}
        ready = [t.taskId for t in self.tasks if indegree[t.taskId] == 0]
        while ready:
            tid = ready.pop(0)
            order.append(tid)
            for e in self.out_edges(tid):
                indegree[e.toTask] -= 1
                if indegree[e.toTask] == 0:
                    ready.append(e.toTask)
        return order


@dataclass(frozen=True)
class VmDef:
    vmId: str
    slotCount: int


@dataclass(frozen=True)
class Schedule:
    """Mapping of task-instance id -> (vmId, slotIndex)."""

    placements: dict[str, tuple[str, int]]

    def vm_of(self, inst: str) -> str:
        return self.placements[inst][0]

    def validate(self, instances: list[str], vms: list[VmDef]) -> None:
        slot_counts = {vm.vmId: vm.slotCount for vm in vms}
        seen: set[tuple[str, int]] = set()
        for inst in instances:
            if inst not in self.placements:
                raise ConfigError(f"instance {inst} has no placement")
        for inst, (vm_id, slot) in self.placements.items():
            if vm_id not in slot_counts:
                raise ConfigError(f"placement of {inst} names unknown VM {vm_id}")
            if not 0 <= slot < slot_counts[vm_id]:
                raise ConfigError(
                    f"placement of {inst} uses slot {slot} outside VM {vm_id} "
                    f"(slotCount {slot_counts[vm_id]})"
                )
            key = (vm_id, slot)
            if key in seen:
                raise ConfigError(f"slot {key} hosts more than one instance")
            seen.add(key)


@dataclass
class ScenarioConfig:
    """A full migration experiment: dataflow, resources, strategy, knobs.

    Durations named ``*Ms`` are milliseconds; the rest are seconds of
    simulated time (floats accepted, stored as given, converted to ms by
    the engine).
    """

    name: str
    dag: DagDef
    vmsBefore: list[VmDef]
    vmsAfter: list[VmDef]
    scheduleBefore: Schedule
    scheduleAfter: Schedule
    strategy: str
    sourceRate: float = 8.0
    runDuration: float = 720.0
    migrationTriggerAt: float = 180.0
    ackTimeout: float = 30.0
    checkpointInterval: float = 30.0
    initResendInterval: float = 1.0
    rebalanceDuration: float = 7.26
    networkDelayMs: int = 0
    randomSeed: int = 1

    # Model calibration knobs (see README): respawned workers become able
    # to receive events only after a startup delay, mirroring the slow
    # worker activation that dominates observed restore times.
    workerStartupMinMs: int = 31_000
    workerStartupMaxMs: int = 36_000
    # Cap on unacked roots when data acking is enabled (source throttles
    # paced emission beyond it, as a real spout's pending limit would).
    maxPendingRoots: int = 240
    # Checkpoint store write cost model: base per record + per byte.
    storeWriteBaseMs: float = 0.4
    storeWritePerByteMs: float = 0.0013
    storeBackend: str = "memory"
    # Ack tracking for DATA events; default depends on strategy.
    ackDataEvents: bool | None = None
    ratePerInstance: float = DEFAULT_RATE_PER_INSTANCE

    def data_acking_enabled(self) -> bool:
        if self.ackDataEvents is not None:
            return self.ackDataEvents
        return self.strategy == "DSM"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_dag(dag: DagDef) -> ValidationResult:
    """Check the structural invariants of a dataflow definition.

    Violations are data, not exceptions: callers decide whether to raise.
    """
    violations: list[str] = []
    ids = [t.taskId for t in dag.tasks]
    id_set = set(ids)
    if len(ids) != len(id_set):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        violations.append(f"duplicate task ids: {', '.join(dupes)}")

    for t in dag.tasks:
        if t.serviceTimeMs <= 0:
            violations.append(f"task {t.taskId}: serviceTimeMs must be > 0")
        if t.selectivity <= 0:
            violations.append(f"task {t.taskId}: selectivity must be > 0")
        if t.instanceCount < 1:
            violations.append(f"task {t.taskId}: instanceCount must be >= 1")

    for e in dag.edges:
        if e.fromTask not in id_set or e.toTask not in id_set:
            violations.append(f"edge {e.fromTask}->{e.toTask} references unknown task")
        if e.grouping not in GROUPINGS:
            violations.append(
                f"edge {e.fromTask}->{e.toTask}: unknown grouping {e.grouping}"
            )

    for s in dag.sourceTasks:
        if s not in id_set:
            violations.append(f"source task {s} not declared")
        elif dag.in_edges(s):
            violations.append(f"source {s} has in-edge")
    for s in dag.sinkTasks:
        if s not in id_set:
            violations.append(f"sink task {s} not declared")
        elif dag.out_edges(s):
            violations.append(f"sink {s} has out-edge")

    order = dag.topological_order()
    if len(order) != len(dag.tasks):
        cyclic = sorted(id_set - set(order))
        violations.append(f"cycle involving: {', '.join(cyclic)}")
    else:
        reachable = set(dag.sourceTasks)
        for tid in order:
            if tid in reachable:
                for e in dag.out_edges(tid):
                    reachable.add(e.toTask)
        unreachable = [tid for tid in ids if tid not in reachable]
        if unreachable:
            violations.append(
                f"not reachable from any source: {', '.join(unreachable)}"
            )

    return ValidationResult(tuple(violations))


def compute_cumulative_rates(dag: DagDef, source_rate: float) -> dict[str, float]:
    """Steady-state input rate (events/sec) of every task.

    DUPLICATE out-edges each carry the parent's full output; SHUFFLE
    out-edges split it evenly.  Sources have no input rate of their own
    but emit at ``source_rate``.
    """
    rates: dict[str, float] = {t.taskId: 0.0 for t in dag.tasks}
    for tid in dag.topological_order():
        task = dag.task(tid)
        if tid in dag.sourceTasks:
            out_rate = source_rate
        else:
            out_rate = rates[tid] * task.selectivity
        out = dag.out_edges(tid)
        shuffle_edges = [e for e in out if e.grouping == SHUFFLE]
        for e in out:
            share = out_rate if e.grouping == DUPLICATE else out_rate / len(shuffle_edges)
            rates[e.toTask] += share
    return rates


def sink_exit_rate(dag: DagDef, source_rate: float) -> float:
    """Expected events/sec leaving the dataflow through its sinks."""
    rates = compute_cumulative_rates(dag, source_rate)
    return sum(rates[s] for s in dag.sinkTasks)


def path_multiplicity(dag: DagDef, source_rate: float = 8.0) -> int:
    """Sink arrivals per root under unit selectivity (source->sink paths)."""
    mult = sink_exit_rate(dag, source_rate) / source_rate
    rounded = round(mult)
    if abs(mult - rounded) > 1e-9:
        raise ConfigError(f"dag {dag.name}: non-integral path multiplicity {mult}")
    return int(rounded)


def min_instances(rate: float, rate_per_instance: float) -> int:
    """ceil(rate / rate_per_instance), at least 1."""
    if rate_per_instance <= 0:
        raise ConfigError("ratePerInstance must be > 0")
    return max(1, math.ceil(rate / rate_per_instance - 1e-9))


def validate_sizing(dag: DagDef, source_rate: float, rate_per_instance: float) -> ValidationResult:
    """Check every user task has enough instances for its input rate."""
    rates = compute_cumulative_rates(dag, source_rate)
    violations = []
    for t in dag.user_tasks():
        need = min_instances(rates[t.taskId], rate_per_instance)
        if t.instanceCount < need:
            violations.append(
                f"task {t.taskId}: instanceCount {t.instanceCount} < required {need} "
                f"for {rates[t.taskId]:g} events/sec"
            )
    return ValidationResult(tuple(violations))


def round_robin_placement(instances: list[str], vms: list[VmDef]) -> Schedule:
    """Assign instances to slots cycling over the VMs in declared order.

    Instance k goes to VM (k mod len(vms)); slot indexes increase per VM.
    Pure function of its inputs.
    """
    total_slots = sum(vm.slotCount for vm in vms)
    if len(instances) > total_slots:
        raise InsufficientSlotsError(
            f"{len(instances)} instances do not fit in {total_slots} slots"
        )
    placements: dict[str, tuple[str, int]] = {}
    next_slot = {vm.vmId: 0 for vm in vms}
    vm_cycle = 0
    for inst in instances:
        # Skip VMs that are already full.
        for _ in range(len(vms)):
            vm = vms[vm_cycle % len(vms)]
            vm_cycle += 1
            if next_slot[vm.vmId] < vm.slotCount:
                placements[inst] = (vm.vmId, next_slot[vm.vmId])
                next_slot[vm.vmId] += 1
                break
    return Schedule(placements)


def migrating_instances(before: Schedule, after: Schedule) -> set[str]:
    """Instances whose placement changes between the two schedules."""
    return {
        inst
        for inst, placement in before.placements.items()
        if after.placements.get(inst) != placement
    }


# ---------------------------------------------------------------------------
# JSON parsing


_SCENARIO_FIELDS = {
    "name", "dag", "vmsBefore", "vmsAfter", "scheduleBefore", "scheduleAfter",
    "strategy", "sourceRate", "runDuration", "migrationTriggerAt", "ackTimeout",
    "checkpointInterval", "initResendInterval", "rebalanceDuration",
    "networkDelayMs", "randomSeed", "workerStartupMinMs", "workerStartupMaxMs",
    "maxPendingRoots", "storeWriteBaseMs", "storeWritePerByteMs", "storeBackend",
    "ackDataEvents", "ratePerInstance",
}

_TASK_FIELDS = {"taskId", "name", "serviceTimeMs", "selectivity", "stateful", "instanceCount"}
_EDGE_FIELDS = {"fromTask", "toTask", "grouping"}
_DAG_FIELDS = {"name", "tasks", "edges", "sourceTasks", "sinkTasks"}


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")


def parse_dag(doc: dict, name: str = "") -> DagDef:
    _reject_unknown(doc, _DAG_FIELDS, "dag")
    try:
        tasks = []
        for raw in doc["tasks"]:
            _reject_unknown(raw, _TASK_FIELDS, f"task {raw.get('taskId', '?')}")
            tasks.append(
                TaskDef(
                    taskId=str(raw["taskId"]),
                    name=str(raw.get("name", raw["taskId"])),
                    serviceTimeMs=int(raw.get("serviceTimeMs", 100)),
                    selectivity=float(raw.get("selectivity", 1.0)),
                    stateful=bool(raw.get("stateful", False)),
                    instanceCount=int(raw.get("instanceCount", 1)),
                )
            )
        edges = []
        for raw in doc.get("edges", []):
            _reject_unknown(raw, _EDGE_FIELDS, "edge")
            edges.append(
                Edge(
                    fromTask=str(raw["fromTask"]),
                    toTask=str(raw["toTask"]),
                    grouping=str(raw.get("grouping", SHUFFLE)),
                )
            )
        dag = DagDef(
            name=str(doc.get("name", name)),
            tasks=tuple(tasks),
            edges=tuple(edges),
            sourceTasks=tuple(str(s) for s in doc["sourceTasks"]),
            sinkTasks=tuple(str(s) for s in doc["sinkTasks"]),
        )
    except KeyError as exc:
        raise ConfigError(f"dag: missing field {exc.args[0]}") from None
    result = validate_dag(dag)
    if not result.ok:
        raise ConfigError("invalid dag: " + "; ".join(result.violations))
    return dag


def _parse_vms(raw: list, where: str) -> list[VmDef]:
    vms = []
    for item in raw:
        _reject_unknown(item, {"vmId", "slotCount"}, where)
        vm = VmDef(vmId=str(item["vmId"]), slotCount=int(item["slotCount"]))
        if vm.slotCount < 1:
            raise ConfigError(f"{where}: VM {vm.vmId} slotCount must be >= 1")
        vms.append(vm)
    if len({vm.vmId for vm in vms}) != len(vms):
        raise ConfigError(f"{where}: duplicate vmId")
    return vms


def _resolve_schedule(raw, dag: DagDef, vms: list[VmDef], where: str) -> Schedule:
    instances = [
        inst
        for tid in dag.topological_order()
        for inst in dag.task(tid).instance_ids()
        if tid not in dag.sourceTasks and tid not in dag.sinkTasks
    ]
    if raw is None or raw == "roundRobin":
        return round_robin_placement(instances, vms)
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected 'roundRobin' or a placements object")
    placements_raw = raw.get("placements", raw)
    placements = {}
    for inst, loc in placements_raw.items():
        if not isinstance(loc, (list, tuple)) or len(loc) != 2:
            raise ConfigError(f"{where}: placement of {inst} must be [vmId, slotIndex]")
        placements[str(inst)] = (str(loc[0]), int(loc[1]))
    schedule = Schedule(placements)
    schedule.validate(instances, vms)
    return schedule


def parse_scenario(doc: dict, name: str = "") -> ScenarioConfig:
    """Build a validated ScenarioConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a JSON object")
    _reject_unknown(doc, _SCENARIO_FIELDS, "scenario")

    dag_raw = doc.get("dag")
    if dag_raw is None:
        raise ConfigError("scenario: missing field dag")
    if isinstance(dag_raw, str):
        dag = load_bundled_dag(dag_raw)
    else:
        dag = parse_dag(dag_raw)

    strategy = str(doc.get("strategy", "")).upper()
    if strategy not in STRATEGIES:
        raise ConfigError(
            f"scenario field strategy: expected one of {'/'.join(STRATEGIES)}, "
            f"got {doc.get('strategy')!r}"
        )

    try:
        vms_before = _parse_vms(doc["vmsBefore"], "vmsBefore")
        vms_after = _parse_vms(doc["vmsAfter"], "vmsAfter")
    except KeyError as exc:
        raise ConfigError(f"scenario: missing field {exc.args[0]}") from None

    config = ScenarioConfig(
        name=str(doc.get("name", name)),
        dag=dag,
        vmsBefore=vms_before,
        vmsAfter=vms_after,
        scheduleBefore=_resolve_schedule(doc.get("scheduleBefore"), dag, vms_before, "scheduleBefore"),
        scheduleAfter=_resolve_schedule(doc.get("scheduleAfter"), dag, vms_after, "scheduleAfter"),
        strategy=strategy,
        sourceRate=float(doc.get("sourceRate", 8.0)),
        runDuration=float(doc.get("runDuration", 720.0)),
        migrationTriggerAt=float(doc.get("migrationTriggerAt", 180.0)),
        ackTimeout=float(doc.get("ackTimeout", 30.0)),
        checkpointInterval=float(doc.get("checkpointInterval", 30.0)),
        initResendInterval=float(doc.get("initResendInterval", 1.0)),
        rebalanceDuration=float(doc.get("rebalanceDuration", 7.26)),
        networkDelayMs=int(doc.get("networkDelayMs", 0)),
        randomSeed=int(doc.get("randomSeed", 1)),
        workerStartupMinMs=int(doc.get("workerStartupMinMs", 31_000)),
        workerStartupMaxMs=int(doc.get("workerStartupMaxMs", 36_000)),
        maxPendingRoots=int(doc.get("maxPendingRoots", 240)),
        storeWriteBaseMs=float(doc.get("storeWriteBaseMs", 0.4)),
        storeWritePerByteMs=float(doc.get("storeWritePerByteMs", 0.0013)),
        storeBackend=str(doc.get("storeBackend", "memory")),
        ackDataEvents=doc.get("ackDataEvents"),
        ratePerInstance=float(doc.get("ratePerInstance", DEFAULT_RATE_PER_INSTANCE)),
    )
    validate_scenario(config)
    return config


def validate_scenario(config: ScenarioConfig) -> None:
    for field_name in (
        "sourceRate", "runDuration", "migrationTriggerAt", "ackTimeout",
        "checkpointInterval", "initResendInterval",
    ):
        if getattr(config, field_name) <= 0:
            raise ConfigError(f"scenario field {field_name}: must be > 0")
    if config.rebalanceDuration < 0 or config.networkDelayMs < 0:
        raise ConfigError("scenario: durations must be non-negative")
    if config.migrationTriggerAt >= config.runDuration:
        raise ConfigError(
            "scenario field migrationTriggerAt: must be < runDuration "
            f"({config.migrationTriggerAt} >= {config.runDuration})"
        )
    if config.workerStartupMinMs > config.workerStartupMaxMs:
        raise ConfigError("scenario: workerStartupMinMs > workerStartupMaxMs")
    if config.storeBackend not in ("memory", "file"):
        raise ConfigError(f"scenario field storeBackend: unknown {config.storeBackend!r}")
    sizing = validate_sizing(config.dag, config.sourceRate, config.ratePerInstance)
    if not sizing.ok:
        raise ConfigError("under-provisioned dag: " + "; ".join(sizing.violations))


def load_scenario_file(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario {path}: line {exc.lineno}: {exc.msg}") from None
    return parse_scenario(doc, name=path.stem)


# ---------------------------------------------------------------------------
# Bundled topologies and scenarios


def _bundled_root():
    return resources.files("flowmigrate") / "scenarios"


def bundled_scenario_names() -> list[str]:
    return sorted(
        p.name[: -len(".json")]
        for p in _bundled_root().iterdir()
        if p.name.endswith(".json")
    )


def bundled_dag_names() -> list[str]:
    return sorted(
        p.name[: -len(".json")]
        for p in (_bundled_root() / "dags").iterdir()
        if p.name.endswith(".json")
    )


def load_bundled_dag(name: str) -> DagDef:
    res = _bundled_root() / "dags" / f"{name}.json"
    try:
        doc = json.loads(res.read_text())
    except FileNotFoundError:
        raise ConfigError(
            f"unknown bundled dag {name!r}; available: {', '.join(bundled_dag_names())}"
        ) from None
    return parse_dag(doc, name=name)


def load_bundled_scenario(name: str) -> ScenarioConfig:
    res = _bundled_root() / f"{name}.json"
    try:
        doc = json.loads(res.read_text())
    except FileNotFoundError:
        raise ConfigError(
            f"unknown bundled scenario {name!r}; available: "
            f"{', '.join(bundled_scenario_names())}"
        ) from None
    return parse_scenario(doc, name=name)


def resolve_scenario(ref: str | Path) -> ScenarioConfig:
    """Load a scenario from a path, falling back to the bundled set.

    Accepts a filesystem path, a bare bundled name ('grid_scalein') or a
    path-shaped reference to a bundled file ('scenarios/grid_scalein.json').
    """
    path = Path(ref)
    if path.exists():
        return load_scenario_file(path)
    stem = path.name[: -len(".json")] if path.name.endswith(".json") else path.name
    try:
        return load_bundled_scenario(stem)
    except ConfigError:
        raise ConfigError(f"scenario not found: {ref}") from None


def with_overrides(config: ScenarioConfig, **overrides) -> ScenarioConfig:
    """Copy a config with selected fields replaced, re-validated."""
    updated = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    validate_scenario(updated)
    return updated
