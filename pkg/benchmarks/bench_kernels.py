#!/usr/bin/env python3
"""Compare the compiled kernel extension against the pure-Python fallback.

Two views:
  * microbenchmarks of the hot structures (calendar push/pop, acker ops)
  * one full Grid scale-in run per strategy with each backend

Results are wall-clock; both backends produce bit-identical timelines, so
only speed differs.  Run from the repository root:

    python benchmarks/bench_kernels.py [--events 500000]
"""

import argparse
import random
import time

from flowmigrate._kernels import available_backends, get_backend
from flowmigrate.model import load_bundled_scenario, with_overrides
from flowmigrate.runtime import run_scenario


def bench_calendar(backend, n: int) -> float:
    cal = get_backend(backend).EventCalendar()
    rng = random.Random(1)
    times = [rng.randrange(1_000_000) for _ in range(n)]
    start = time.perf_counter()
    for i in range(n):
        cal.push(times[i], i)
        if i % 3 == 2:
            cal.pop()
    while len(cal):
        cal.pop()
    return time.perf_counter() - start


def bench_acker(backend, n: int) -> float:
    table = get_backend(backend).AckerTable()
    rng = random.Random(2)
    roots = [rng.getrandbits(64) or 1 for _ in range(n // 16)]
    events = [rng.getrandbits(64) or 1 for _ in range(n)]
    start = time.perf_counter()
    for root in roots:
        table.register(root, 0)
    for i, event in enumerate(events):
        root = roots[i % len(roots)]
        table.anchor(root, event)
        table.ack(root, event)
    table.sweep(10 ** 9, 30_000)
    return time.perf_counter() - start


def bench_full_run(backend: str) -> dict[str, float]:
    results = {}
    base = load_bundled_scenario("grid_scalein")
    for strategy in ("DSM", "DCR", "CCR"):
        config = with_overrides(base, strategy=strategy)
        start = time.perf_counter()
        run_scenario(config, kernel_backend=backend)
        results[strategy] = time.perf_counter() - start
    return results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--events", type=int, default=500_000,
                        help="operations per microbenchmark")
    args = parser.parse_args()

    backends = sorted(available_backends())
    if len(backends) < 2:
        print("note: only the pure backend is available (extension not built)")

    print(f"{'benchmark':<28}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    rows = [
        ("calendar push/pop", bench_calendar),
        ("acker anchor/ack", bench_acker),
    ]
    for label, fn in rows:
        timings = {b: fn(b, args.events) for b in backends}
        line = f"{label:<28}" + "".join(f"{timings[b]:>11.3f}s" for b in backends)
        if "native" in timings and "pure" in timings:
            line += f"{timings['pure'] / timings['native']:>9.2f}x"
        print(line)

    full = {b: bench_full_run(b) for b in backends}
    for strategy in ("DSM", "DCR", "CCR"):
        label = f"grid_scalein full run {strategy}"
        line = f"{label:<28}" + "".join(f"{full[b][strategy]:>11.3f}s" for b in backends)
        if "native" in full and "pure" in full:
            line += f"{full['pure'][strategy] / full['native'][strategy]:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
