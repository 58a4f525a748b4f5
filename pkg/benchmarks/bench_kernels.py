"""Time the schedule kernels: compiled backend against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json]
"""

import argparse
import json
import timeit

import numpy as np

from freya import kernels
from freya.collectors import WorkerPool
from freya.simclock import WorkerTimeModel

CASES = [
    # (label, n workers, kernel, size)
    ("first S=32, n=100", 100, "first", 32),
    ("first S=1000, n=1000", 1000, "first", 1000),
    ("full m=1000, n=100", 100, "distinct", 1000),
    ("full m=10000, n=1000", 1000, "distinct", 10000),
]


def run_case(backend, n, kind, size, number):
    pool = WorkerPool(WorkerTimeModel(np.sqrt(np.arange(1, n + 1))), seed=0, backend=backend)
    if kind == "first":
        call = lambda: pool.first(size, 10 * size, 0, 1.0)  # noqa: E731
    else:
        counts = np.ones(size, dtype=np.int64)
        call = lambda: pool.distinct(counts, 0, 1.0)  # noqa: E731
    return timeit.timeit(call, number=number) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()

    backends = ["python"]
    try:
        kernels.backend("cython")
        backends.append("cython")
    except ImportError:
        print("compiled kernels not built; timing the fallback only")

    rows = []
    for label, n, kind, size in CASES:
        times = {b: run_case(b, n, kind, size, args.repeat) for b in backends}
        row = {"case": label, **{f"{b}_s": t for b, t in times.items()}}
        if "cython" in times:
            row["speedup"] = times["python"] / times["cython"]
        rows.append(row)

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'case':24s}" + "".join(f"{b + ' (ms)':>16s}" for b in backends) + "   speedup")
    for row in rows:
        cells = "".join(f"{1e3 * row[f'{b}_s']:16.3f}" for b in backends)
        speed = f"{row['speedup']:9.1f}x" if "speedup" in row else ""
        print(f"{row['case']:24s}{cells}{speed}")


if __name__ == "__main__":
    main()
