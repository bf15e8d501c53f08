"""Regenerate the bundled scenario JSON files from the VM sizing matrix."""

import json
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent / "src" / "flowmigrate" / "scenarios"

# dag -> (default VM count @2 slots, scale-in VM count @4 slots, scale-out VM count @1 slot)
SIZING = {
    "linear": (3, 2, 5),
    "diamond": (4, 2, 8),
    "star": (4, 2, 8),
    "grid": (11, 6, 21),
    "traffic": (7, 4, 13),
}

SEEDS = {
    "linear_scalein": 101, "linear_scaleout": 102,
    "diamond_scalein": 201, "diamond_scaleout": 202,
    "star_scalein": 301, "star_scaleout": 302,
    "grid_scalein": 401, "grid_scaleout": 402,
    "traffic_scalein": 501, "traffic_scaleout": 502,
}


def vms(prefix: str, count: int, slots: int) -> list[dict]:
    return [{"vmId": f"{prefix}-{i + 1:02d}", "slotCount": slots} for i in range(count)]


def write(name: str, doc: dict) -> None:
    path = ROOT / f"{name}.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {path}")


def main() -> None:
    for dag, (n_default, n_in, n_out) in SIZING.items():
        for direction in ("scalein", "scaleout"):
            name = f"{dag}_{direction}"
            if direction == "scalein":
                after = vms("d3", n_in, 4)
            else:
                after = vms("d1", n_out, 1)
            write(name, {
                "name": name,
                "dag": dag,
                "strategy": "DSM",
                "vmsBefore": vms("d2", n_default, 2),
                "vmsAfter": after,
                "scheduleBefore": "roundRobin",
                "scheduleAfter": "roundRobin",
                "randomSeed": SEEDS[name],
            })

    # Long-chain stress topology for the drain-vs-capture gap.
    tasks = [{"taskId": "src", "name": "event generator", "serviceTimeMs": 1,
              "instanceCount": 1}]
    edges = []
    prev = "src"
    for i in range(1, 51):
        tid = f"U{i:02d}"
        tasks.append({
            "taskId": tid,
            "name": f"stage {i}",
            "instanceCount": 1,
            "stateful": i in (10, 40),
        })
        edges.append({"fromTask": prev, "toTask": tid, "grouping": "SHUFFLE"})
        prev = tid
    tasks.append({"taskId": "sink", "name": "publisher", "instanceCount": 1})
    edges.append({"fromTask": prev, "toTask": "sink", "grouping": "SHUFFLE"})
    (ROOT / "dags" / "linear50.json").write_text(json.dumps({
        "name": "linear50",
        "tasks": tasks,
        "edges": edges,
        "sourceTasks": ["src"],
        "sinkTasks": ["sink"],
    }, indent=2) + "\n")
    print(f"wrote {ROOT / 'dags' / 'linear50.json'}")

    write("linear50_stress", {
        "name": "linear50_stress",
        "dag": "linear50",
        "strategy": "DCR",
        "vmsBefore": vms("d2", 25, 2),
        "vmsAfter": vms("d3", 13, 4),
        "scheduleBefore": "roundRobin",
        "scheduleAfter": "roundRobin",
        "runDuration": 300,
        "migrationTriggerAt": 120,
        "randomSeed": 901,
    })


if __name__ == "__main__":
    main()
