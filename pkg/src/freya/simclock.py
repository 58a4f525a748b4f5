"""Deterministic discrete-event clock for n heterogeneous workers.

Simulated time is a double in seconds.  Events are ordered by
``(completion_time, sequence_number)`` where the sequence number is the
assignment order, which makes every run reproducible.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "NoProgressError",
    "WorkerTimeModel",
    "SimClock",
    "StreamBank",
    "stream_seed",
    "IterationRecord",
    "RunTrace",
    "task_duration",
]

PREPROCESS = -1


class NoProgressError(RuntimeError):
    """Raised when every worker has infinite compute time."""

    def __init__(self, msg="cannot make progress: every worker has infinite compute time"):
        super().__init__(msg)


class WorkerTimeModel:
    """Per-gradient compute time of each worker.

    Modes
    -----
    static
        worker i always takes ``taus[i]``.
    dynamic
        ``schedule[k][i]`` for iteration k (k = -1 is the initial full
        gradient).  An optional ``default`` vector covers missing k.
    stochastic
        a draw uniform on ``[low * taus[i], taus[i]]``, so ``taus`` stays an
        upper bound.
    """

    def __init__(self, taus=None, mode="static", schedule=None, default=None, low=0.5):
        if mode not in ("static", "dynamic", "stochastic"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.low = float(low)
        self.default = None if default is None else self._vector(default)
        if mode == "dynamic":
            if not schedule:
                raise ValueError("dynamic mode needs a schedule")
            self.schedule = {int(k): self._vector(v) for k, v in schedule.items()}
            lengths = {v.size for v in self.schedule.values()}
            if self.default is not None:
                lengths.add(self.default.size)
            if len(lengths) != 1:
                raise ValueError("schedule vectors must all have n entries")
            self.n = lengths.pop()
            self.taus = None
        else:
            if taus is None:
                raise ValueError(f"{mode} mode needs taus")
            self.taus = self._vector(taus)
            self.n = self.taus.size
            if not np.isfinite(self.taus).any():
                raise NoProgressError()
            if mode == "stochastic" and not 0.0 <= self.low <= 1.0:
                raise ValueError("low must lie in [0, 1]")

    @staticmethod
    def _vector(v):
        arr = np.asarray(v, dtype=float).ravel()
        if arr.size == 0 or np.isnan(arr).any() or (arr < 0).any():
            raise ValueError("times must be non-negative numbers (inf allowed)")
        return arr

    @classmethod
    def sqrt_model(cls, n):
        """Worker i (1-based) needs sqrt(i) seconds per gradient."""
        return cls(np.sqrt(np.arange(1, n + 1)))

    def bounds(self, k=0):
        """Upper bounds for iteration k."""
        if self.mode == "dynamic":
            if k in self.schedule:
                return self.schedule[k]
            if self.default is not None:
                return self.default
            raise KeyError(f"no schedule entry for iteration {k}")
        return self.taus

    @property
    def stochastic(self):
        return self.mode == "stochastic"

    def to_dict(self):
        doc = {"mode": self.mode, "n": self.n}
        if self.mode == "dynamic":
            doc["schedule"] = {str(k): v.tolist() for k, v in sorted(self.schedule.items())}
        else:
            doc["taus"] = self.taus.tolist()
        if self.mode == "stochastic":
            doc["low"] = self.low
        return doc


def task_duration(model, worker, k, rng=None):
    """Seconds worker ``worker`` needs for one gradient at iteration ``k``."""
    if not 0 <= worker < model.n:
        raise IndexError(f"worker {worker} out of range")
    tau = float(model.bounds(k)[worker])
    if model.stochastic:
        if rng is None:
            raise ValueError("stochastic mode needs an rng stream")
        return tau * (model.low + (1.0 - model.low) * rng.random())
    return tau


class SimClock:
    """Event queue plus per-worker busy state."""

    def __init__(self, n, start=0.0):
        self.n = n
        self.now = float(start)
        self._queue = []
        self._seq = 0
        self._task = [None] * n
        self._busy = [False] * n

    def is_busy(self, worker):
        return self._busy[worker]

    def assign(self, worker, task, duration):
        if self._busy[worker]:
            raise RuntimeError(f"worker {worker} is busy")
        if not duration >= 0:
            raise ValueError("duration must be non-negative")
        self._busy[worker] = True
        self._task[worker] = task
        seq = self._seq
        self._seq += 1
        if not math.isinf(duration):
            heapq.heappush(self._queue, (self.now + duration, seq, worker))

    def next_completion(self):
        """Pop the earliest completion as ``(time, worker, task)``; None when exhausted."""
        if not self._queue:
            return None
        time, _, worker = heapq.heappop(self._queue)
        self.now = time
        self._busy[worker] = False
        task, self._task[worker] = self._task[worker], None
        return time, worker, task

    @property
    def pending(self):
        return len(self._queue)


def stream_seed(seed, *key):
    """SeedSequence for a named sub-stream; stable under changes of n."""
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


class StreamBank:
    """One PCG64 stream per worker.

    Worker w of bank ``tag`` is seeded from ``(seed, tag, w)``, so adding a
    worker never perturbs the others.
    """

    def __init__(self, seed, tag, n):
        self.bitgens = [np.random.PCG64(stream_seed(seed, tag, w)) for w in range(n)]
        self.generators = [np.random.Generator(bg) for bg in self.bitgens]
        self._pointers = None

    @property
    def pointers(self):
        if self._pointers is None:
            from ._kernels_c import bitgen_pointers
            self._pointers = bitgen_pointers(self.bitgens)
        return self._pointers

    def __len__(self):
        return len(self.bitgens)


@dataclass
class IterationRecord:
    k: int
    t_start: float
    t_end: float
    kind: str
    dispatches: int
    completions: int
    aggregated: int
    oracle_calls: list = field(default_factory=list)
    duration: float = 0.0  # exact phase length; t_end - t_start can round


class RunTrace:
    """Per-iteration timing records of one run."""

    def __init__(self, n):
        self.n = n
        self.records = []
        self.calls = np.zeros(n, dtype=np.int64)
        self.busy_time = np.zeros(n)

    def add(self, k, t_start, result, kind):
        calls = np.asarray(result.oracle_calls, dtype=np.int64)
        self.records.append(IterationRecord(
            k=k, t_start=t_start, t_end=t_start + result.duration, kind=kind,
            dispatches=int(result.dispatches), completions=int(result.completions),
            aggregated=int(result.aggregated), oracle_calls=calls.tolist(),
            duration=float(result.duration)))
        self.calls += calls
        self.busy_time += np.asarray(result.busy_time)

    @property
    def total_time(self):
        return self.records[-1].t_end if self.records else 0.0

    def durations(self):
        return [r.duration for r in self.records]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t_start", "t_end", "duration", "kind", "dispatches", "completions",
                        "aggregated"])
            for r in self.records:
                w.writerow([r.k, repr(r.t_start), repr(r.t_end), repr(r.duration), r.kind, r.dispatches,
                            r.completions, r.aggregated])

    def to_dict(self):
        return {
            "n": self.n,
            "total_time": self.total_time,
            "oracle_calls": self.calls.tolist(),
            "busy_time": self.busy_time.tolist(),
            "iterations": [asdict(r) for r in self.records],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
