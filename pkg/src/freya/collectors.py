"""Gradient collection strategies for asynchronous heterogeneous workers.

Each collector simulates one phase on a fresh clock (all workers free at
the start, in-flight work discarded at the end) and returns the aggregated
vector together with the simulated duration of the phase.

A gradient task costs one oracle call (``tau`` seconds); a gradient
difference costs two (``2 tau`` seconds).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .simclock import StreamBank, WorkerTimeModel

__all__ = [
    "WorkerPool",
    "Sampler",
    "CollectionResult",
    "compute_gradient",
    "compute_batch",
    "compute_batch_difference",
    "compute_batch_any_sampling",
    "compute_batch_difference_any_sampling",
]

INDEX_STREAMS = 1
DURATION_STREAMS = 2


class WorkerPool:
    """A worker time model together with the per-worker random streams of one run."""

    def __init__(self, model: WorkerTimeModel, seed=0, backend=None):
        self.model = model
        self.n = model.n
        self.seed = seed
        self.index_bank = StreamBank(seed, INDEX_STREAMS, model.n)
        self.duration_bank = StreamBank(seed, DURATION_STREAMS, model.n)
        if backend is None:
            self._first, self._distinct = kernels.collect_first, kernels.collect_distinct
        else:
            self._first, self._distinct = kernels.backend(backend)

    def task_seconds(self, k, cost):
        return cost * self.model.bounds(k)

    @property
    def low(self):
        return self.model.low if self.model.stochastic else None

    def first(self, S, m, k, cost):
        return self._first(S, m, self.task_seconds(k, cost), self.low,
                           self.index_bank, self.duration_bank)

    def distinct(self, counts, k, cost):
        return self._distinct(counts, self.task_seconds(k, cost), self.low,
                              self.index_bank, self.duration_bank)


class Sampler:
    """Server-side minibatch sampling: ``uniform`` (with replacement), ``nice`` or ``importance``."""

    KINDS = ("uniform", "nice", "importance")

    def __init__(self, kind="uniform", rng=None, L_i=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown sampler {kind!r}")
        self.kind = kind
        self.rng = rng if rng is not None else np.random.default_rng()
        self.probs = None
        if kind == "importance":
            if L_i is None:
                raise ValueError("importance sampling needs per-component smoothness constants")
            L_i = np.asarray(L_i, dtype=float)
            if (L_i <= 0).any():
                raise ValueError("importance sampling needs positive smoothness constants")
            self.probs = L_i / L_i.sum()

    def sample(self, S, m):
        if self.kind == "uniform":
            return self.rng.integers(0, m, size=S)
        if self.kind == "nice":
            if S > m:
                raise ValueError("nice sampling needs S <= m")
            return self.rng.choice(m, size=S, replace=False)
        if self.probs.size != m:
            raise ValueError("smoothness constants do not match m")
        return self.rng.choice(m, size=S, replace=True, p=self.probs)

    def weights(self, indices, m):
        """Per-element factors making the minibatch mean unbiased (None = all ones)."""
        if self.kind != "importance":
            return None
        return 1.0 / (m * self.probs[np.asarray(indices)])


@dataclass
class CollectionResult:
    g: np.ndarray
    duration: float
    oracle_calls: np.ndarray
    aggregated: int
    completions: int
    dispatches: int
    busy_time: np.ndarray
    indices: np.ndarray

    @property
    def wasted_calls(self):
        """Completed tasks whose result was discarded (duplicates)."""
        return self.completions - self.aggregated


def _result(g, duration, calls, cost, aggregated, busy, dispatches, indices):
    return CollectionResult(g=g, duration=float(duration), oracle_calls=calls * cost,
                            aggregated=aggregated, completions=int(calls.sum()),
                            dispatches=int(dispatches), busy_time=busy, indices=indices)


def compute_gradient(x, objective, pool: WorkerPool, k=0):
    """Exact full gradient; workers draw fresh indices from the not-yet-collected set."""
    return compute_batch_any_sampling(np.arange(objective.m), x, objective, pool, k=k)


def compute_batch(S, x, objective, pool: WorkerPool, k=0):
    """Mean of the first S component gradients returned, indices uniform with replacement."""
    if S < 1:
        raise ValueError("S must be >= 1")
    duration, picked, calls, busy, disp = pool.first(S, objective.m, k, 1.0)
    g = objective.gradient_sum(picked, x) / S
    return _result(g, duration, calls, 1, S, busy, disp, picked)


def compute_batch_difference(S, x, y, objective, pool: WorkerPool, k=0):
    """Mean of the first S gradient differences returned, indices uniform with replacement."""
    if S < 1:
        raise ValueError("S must be >= 1")
    duration, picked, calls, busy, disp = pool.first(S, objective.m, k, 2.0)
    g = (objective.gradient_sum(picked, x) - objective.gradient_sum(picked, y)) / S
    return _result(g, duration, calls, 2, S, busy, disp, picked)


def _collect_multiset(multiset, pool, k, cost):
    multiset = np.asarray(multiset, dtype=np.int64).ravel()
    if multiset.size == 0:
        raise ValueError("multiset must be non-empty")
    values, counts = np.unique(multiset, return_counts=True)
    duration, order, calls, busy, disp = pool.distinct(counts, k, cost)
    return duration, values[order], calls, busy, disp


def _weights_for(indices, weights_by_value):
    if weights_by_value is None:
        return None
    if isinstance(weights_by_value, np.ndarray):
        return weights_by_value[indices]
    return np.asarray([weights_by_value[int(i)] for i in indices])


def compute_batch_any_sampling(multiset, x, objective, pool: WorkerPool, k=0, weights=None):
    """Collect ``(1/|S|) sum_{i in S} w_i grad f_i(x)`` for a multiset S, each element once.

    ``weights`` maps a component index to its factor (default 1).
    """
    duration, indices, calls, busy, disp = _collect_multiset(multiset, pool, k, 1.0)
    g = objective.gradient_sum(indices, x, _weights_for(indices, weights)) / indices.size
    return _result(g, duration, calls, 1, indices.size, busy, disp, indices)


def compute_batch_difference_any_sampling(multiset, x, y, objective, pool: WorkerPool, k=0,
                                          weights=None):
    duration, indices, calls, busy, disp = _collect_multiset(multiset, pool, k, 2.0)
    w = _weights_for(indices, weights)
    g = (objective.gradient_sum(indices, x, w) - objective.gradient_sum(indices, y, w)) / indices.size
    return _result(g, duration, calls, 2, indices.size, busy, disp, indices)
