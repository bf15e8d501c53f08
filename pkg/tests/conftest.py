import pytest

from flowmigrate import acceptance
from flowmigrate.model import (
    DagDef,
    Edge,
    ScenarioConfig,
    TaskDef,
    VmDef,
    round_robin_placement,
    validate_scenario,
)


@pytest.fixture(scope="session")
def suite_cache():
    """One shared run cache for every test that needs full bundled runs."""
    return acceptance.RunCache()


def make_chain_dag(n_tasks: int = 3, stateful: tuple[int, ...] = (2,),
                   sink_instances: int = 1) -> DagDef:
    tasks = [TaskDef("src", serviceTimeMs=1)]
    edges = []
    prev = "src"
    for i in range(1, n_tasks + 1):
        tasks.append(TaskDef(f"T{i}", stateful=i in stateful))
        edges.append(Edge(prev, f"T{i}"))
        prev = f"T{i}"
    tasks.append(TaskDef("sink", instanceCount=sink_instances))
    edges.append(Edge(prev, "sink"))
    return DagDef("chain", tuple(tasks), tuple(edges), ("src",), ("sink",))


def make_scenario(dag: DagDef, strategy: str = "DCR", *, run_s: float = 90,
                  trigger_s: float = 30, seed: int = 7,
                  startup_ms: tuple[int, int] = (1500, 2500),
                  identity: bool = False, **overrides) -> ScenarioConfig:
    """Small, fast scenario around a custom DAG (short run, quick startup)."""
    instances = [
        iid
        for tid in dag.topological_order()
        if tid not in dag.sourceTasks and tid not in dag.sinkTasks
        for iid in dag.task(tid).instance_ids()
    ]
    vms_before = [VmDef(f"a{i}", 2) for i in range((len(instances) + 1) // 2)]
    if identity:
        vms_after = vms_before
    else:
        vms_after = [VmDef(f"b{i}", 4) for i in range((len(instances) + 3) // 4)]
    config = ScenarioConfig(
        name=f"test-{dag.name}-{strategy.lower()}",
        dag=dag,
        vmsBefore=vms_before,
        vmsAfter=vms_after,
        scheduleBefore=round_robin_placement(instances, vms_before),
        scheduleAfter=round_robin_placement(instances, vms_after),
        strategy=strategy,
        runDuration=run_s,
        migrationTriggerAt=trigger_s,
        randomSeed=seed,
        workerStartupMinMs=startup_ms[0],
        workerStartupMaxMs=startup_ms[1],
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    validate_scenario(config)
    return config
