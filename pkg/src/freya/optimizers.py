"""Optimization loops driven by simulated worker time.

Every loop charges the simulated duration of each gradient collection to
a running clock and monitors progress with the exact full gradient, which
is never charged.  Stopping rules: ``eps`` on the smallest observed
``||grad f(x^k)||^2``, ``target`` on ``f(x^k)``, an iteration budget and a
simulated-time budget.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import theory
from .collectors import (
    CollectionResult,
    Sampler,
    WorkerPool,
    compute_batch,
    compute_batch_difference,
    compute_batch_difference_any_sampling,
    compute_gradient,
)
from .simclock import (
    PREPROCESS,
    NoProgressError,
    RunTrace,
    SimClock,
    StreamBank,
    stream_seed,
    task_duration,
)

__all__ = [
    "PageState",
    "OptimizerReport",
    "freya_page_step",
    "run_freya_page",
    "run_freya_sgd",
    "run_rennala_sgd",
    "run_soviet_page",
    "run_asynchronous_sgd",
    "run_gd_baselines",
    "page_parameters",
    "soviet_blocks",
]

COIN_STREAM = 0
SAMPLER_STREAM = 3
SOVIET_DURATION_STREAM = 4
DIVERGED = 1e100


def _rng(seed, tag):
    return np.random.Generator(np.random.PCG64(stream_seed(seed, tag)))


@dataclass
class OptimizerReport:
    method: str
    trajectory: list = field(default_factory=list)
    stop_reason: str = ""
    min_grad_norm_sq: float = math.inf
    eps: float | None = None
    x: np.ndarray | None = None
    iterations: int = 0
    total_time: float = 0.0
    params: dict = field(default_factory=dict)
    trace: RunTrace | None = None
    extras: dict = field(default_factory=dict)

    @property
    def reached_eps(self):
        return self.eps is not None and self.min_grad_norm_sq <= self.eps

    @property
    def times(self):
        return np.array([r[1] for r in self.trajectory])

    @property
    def values(self):
        return np.array([r[3] for r in self.trajectory])

    @property
    def grad_norms_sq(self):
        return np.array([r[2] for r in self.trajectory])

    def time_to_value(self, target):
        """First simulated time at which ``f(x^k) <= target`` (``inf`` if never)."""
        for _, t, _, f in self.trajectory:
            if f <= target:
                return t
        return math.inf

    def write_csv(self, path, f_best=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["k", "time", "grad_norm_sq", "f_value"]
            if f_best is not None:
                header.append("suboptimality")
            w.writerow(header)
            for k, t, gn, f in self.trajectory:
                row = [k, repr(t), repr(gn), repr(f)]
                if f_best is not None:
                    row.append(repr(f - f_best))
                w.writerow(row)


class _Monitor:
    def __init__(self, objective, report, eps, max_iters, max_time, eval_every, target=None):
        if eps is None and max_iters is None and max_time is None and target is None:
            raise ValueError("set eps or an iteration/time budget")
        if eps is not None and eps <= 0:
            raise ValueError("eps must be positive")
        if max_iters is not None and max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if max_time is not None and max_time <= 0:
            raise ValueError("max_time must be positive")
        if eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        self.objective = objective
        self.report = report
        self.eps = eps
        self.max_iters = max_iters
        self.max_time = max_time
        self.eval_every = eval_every
        self.target = target
        report.eps = eps

    def _evaluate(self, k, t, x):
        grad = self.objective.full_gradient(x)
        gn = float(grad @ grad)
        f = float(self.objective.value(x))
        self.report.trajectory.append((k, t, gn, f))
        if gn < self.report.min_grad_norm_sq:
            self.report.min_grad_norm_sq = gn
        return gn, f

    def observe(self, k, t, x):
        """Record iterate ``x^k`` available at time ``t``; return a stop reason or None."""
        last = self.max_iters is not None and k >= self.max_iters
        late = self.max_time is not None and t >= self.max_time
        if k % self.eval_every == 0 or last or late:
            gn, f = self._evaluate(k, t, x)
            if not gn < DIVERGED:
                return "diverged"
            if self.eps is not None and gn <= self.eps:
                return "eps"
            if self.target is not None and f <= self.target:
                return "target"
        if last:
            return "iterations"
        if late:
            return "time"
        return None

    def finish(self, reason, k, t, x):
        if self.report.trajectory[-1][0] != k:
            self._evaluate(k, t, x)
        self.report.stop_reason = reason
        self.report.iterations = k
        self.report.total_time = t
        self.report.x = x


def _bounds(model):
    for k in (0, PREPROCESS):
        try:
            return model.bounds(k)
        except KeyError:
            continue
    return model.bounds(0)


def page_parameters(objective, model, S=None, p=None, rule="large_scale"):
    """Fill in missing ``(S, p)`` by ``large_scale``, ``ratio`` or ``optimal`` rule."""
    m = objective.m
    if S is not None and p is not None:
        return int(S), float(p)
    if rule == "large_scale":
        S0, p0 = theory.large_scale_params(m)
    elif rule == "ratio":
        h = objective.hints
        S0, p0 = theory.ratio_params(m, h.L_minus, h.L_pm)
    elif rule == "optimal":
        h = objective.hints
        S0, p0, _ = theory.optimal_params(m, _bounds(model), h.L_minus, h.L_pm)
    else:
        raise ValueError(f"unknown parameter rule {rule!r}")
    S = S0 if S is None else int(S)
    p = p0 if p is None else float(p)
    return S, p


def _page_gamma(objective, sampler_kind, p, S):
    h = objective.hints
    if h.L_minus is None:
        raise ValueError("auto stepsize needs smoothness hints")
    if sampler_kind == "nice":
        return theory.nice_stepsize(p, S, objective.m, h.L_minus, h.L_pm)
    if sampler_kind == "importance":
        return theory.importance_stepsize(p, S, h.L_minus, h.L_bar)
    return theory.page_stepsize(p, S, h.L_minus, h.L_pm)


@dataclass
class PageState:
    x: np.ndarray
    g: np.ndarray
    gamma: float
    p: float
    S: int
    coin: np.random.Generator
    k: int = 0
    time: float = 0.0
    last: CollectionResult | None = None
    last_kind: str = ""


def freya_page_step(state: PageState, objective, pool: WorkerPool, sampler: Sampler | None = None):
    """One step of the PAGE recursion with asynchronous collection; mutates and returns ``state``."""
    x_new = state.x - state.gamma * state.g
    full = state.p >= 1.0 or state.coin.random() < state.p
    if full:
        res = compute_gradient(x_new, objective, pool, k=state.k)
        state.g = res.g
        state.last_kind = "full"
    elif sampler is None or sampler.kind == "uniform":
        res = compute_batch_difference(state.S, x_new, state.x, objective, pool, k=state.k)
        state.g = state.g + res.g
        state.last_kind = "diff"
    else:
        batch = sampler.sample(state.S, objective.m)
        weights = sampler.weights(np.arange(objective.m), objective.m)
        res = compute_batch_difference_any_sampling(batch, x_new, state.x, objective, pool,
                                                    k=state.k, weights=weights)
        state.g = state.g + res.g
        state.last_kind = "diff"
    state.x = x_new
    state.k += 1
    state.time += res.duration
    state.last = res
    return state


def run_freya_page(objective, model, gamma="auto", S=None, p=None, rule="large_scale",
                   sampler="uniform", eps=None, max_iters=None, max_time=None, target=None,
                   seed=0, eval_every=1, x0=None, backend=None):
    """Freya PAGE.

    ``gamma="auto"`` uses the stepsize matching the sampler; missing ``S``
    and ``p`` are filled by ``rule``.  The initial full gradient is charged
    and uses the preprocessing time bounds (iteration index -1).
    """
    S, p = page_parameters(objective, model, S, p, rule)
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if S < 1:
        raise ValueError("S must be >= 1")
    if gamma == "auto":
        gamma = _page_gamma(objective, sampler, p, S)
    L_i = objective.hints.L_i if sampler == "importance" else None
    smp = Sampler(sampler, _rng(seed, SAMPLER_STREAM), L_i)
    pool = WorkerPool(model, seed, backend=backend)
    report = OptimizerReport("freya_page", params=dict(gamma=gamma, S=S, p=p, sampler=sampler,
                                                        seed=seed))
    mon = _Monitor(objective, report, eps, max_iters, max_time, eval_every, target)
    trace = RunTrace(model.n)
    report.trace = trace

    x = objective.x0.copy() if x0 is None else np.array(x0, dtype=float)
    reason = mon.observe(0, 0.0, x)
    if reason is not None:
        mon.finish(reason, 0, 0.0, x)
        return report
    init = compute_gradient(x, objective, pool, k=PREPROCESS)
    trace.add(PREPROCESS, 0.0, init, "full")
    state = PageState(x=x, g=init.g, gamma=float(gamma), p=p, S=S,
                      coin=_rng(seed, COIN_STREAM), time=init.duration)
    while True:
        t0 = state.time
        freya_page_step(state, objective, pool, smp)
        trace.add(state.k - 1, t0, state.last, state.last_kind)
        reason = mon.observe(state.k, state.time, state.x)
        if reason is not None:
            break
    mon.finish(reason, state.k, state.time, state.x)
    return report


def run_freya_sgd(objective, model, gamma="auto", S=None, eps=None, max_iters=None,
                  max_time=None, target=None, seed=0, eval_every=1, x0=None, delta0=None,
                  delta_star=None, backend=None, method="freya_sgd"):
    """Minibatch SGD whose batches are the first S asynchronous arrivals.

    Auto ``S`` and ``gamma`` need ``eps``, ``delta0`` (defaults to
    ``f(x0) - f*`` when the optimum is known) and ``delta_star``.
    """
    x = objective.x0.copy() if x0 is None else np.array(x0, dtype=float)
    if gamma == "auto" or S is None:
        if eps is None or delta_star is None:
            raise ValueError("automatic SGD parameters need eps and delta_star")
        if delta0 is None:
            f_star = objective.optimum_value()
            if f_star is None:
                raise ValueError("automatic SGD parameters need delta0")
            delta0 = float(objective.value(x)) - f_star
        h = objective.hints
        if S is None:
            S = theory.sgd_params(delta0, eps, h.L_max, delta_star)
        if gamma == "auto":
            gamma = theory.sgd_stepsize(delta0, eps, S, h.L_minus, h.L_max, delta_star)
    if S < 1:
        raise ValueError("S must be >= 1")
    pool = WorkerPool(model, seed, backend=backend)
    report = OptimizerReport(method, params=dict(gamma=gamma, S=S, seed=seed))
    mon = _Monitor(objective, report, eps, max_iters, max_time, eval_every, target)
    trace = RunTrace(model.n)
    report.trace = trace
    k, t = 0, 0.0
    reason = mon.observe(k, t, x)
    while reason is None:
        res = compute_batch(S, x, objective, pool, k=k)
        trace.add(k, t, res, "batch")
        x = x - gamma * res.g
        k += 1
        t += res.duration
        reason = mon.observe(k, t, x)
    mon.finish(reason, k, t, x)
    return report


def run_rennala_sgd(objective, model, **kwargs):
    """Same loop as :func:`run_freya_sgd`, labelled separately in reports."""
    return run_freya_sgd(objective, model, method="rennala_sgd", **kwargs)


def soviet_blocks(m, n):
    """Owner of each component under an equal contiguous split (sizes differ by at most one)."""
    owner = np.empty(m, dtype=np.int64)
    for w, block in enumerate(np.array_split(np.arange(m), n)):
        owner[block] = w
    return owner


class _SovietTimer:
    """Barrier-synchronized phase cost: the slowest worker's share of the work."""

    def __init__(self, model, m, seed):
        self.model = model
        self.owner = soviet_blocks(m, model.n)
        self.block_sizes = np.bincount(self.owner, minlength=model.n)
        self.rng = _rng(seed, SOVIET_DURATION_STREAM) if model.stochastic else None

    def phase(self, counts, k, cost):
        taus = cost * self.model.bounds(k)
        busy = np.zeros(self.model.n)
        active = counts > 0
        if self.rng is None:
            busy[active] = counts[active] * taus[active]
        else:
            low = self.model.low
            for w in np.flatnonzero(active):
                u = self.rng.random(counts[w])
                busy[w] = math.inf if math.isinf(taus[w]) else float(np.sum(taus[w] * (low + (1 - low) * u)))
        return (float(busy.max()) if active.any() else 0.0), busy

    def result(self, g, counts, k, cost, indices):
        duration, busy = self.phase(counts, k, cost)
        return CollectionResult(g=g, duration=duration, oracle_calls=counts * cost,
                                aggregated=int(counts.sum()), completions=int(counts.sum()),
                                dispatches=int(np.count_nonzero(counts)), busy_time=busy,
                                indices=indices)


def run_soviet_page(objective, model, gamma="auto", S=None, p=None, rule="large_scale",
                    eps=None, max_iters=None, max_time=None, target=None, seed=0,
                    eval_every=1, x0=None):
    """PAGE with each component owned by one worker and a barrier after every phase."""
    m = objective.m
    S, p = page_parameters(objective, model, S, p, rule)
    if gamma == "auto":
        gamma = _page_gamma(objective, "uniform", p, S)
    timer = _SovietTimer(model, m, seed)
    coin = _rng(seed, COIN_STREAM)
    draws = _rng(seed, SAMPLER_STREAM)
    report = OptimizerReport("soviet_page", params=dict(gamma=gamma, S=S, p=p, seed=seed))
    mon = _Monitor(objective, report, eps, max_iters, max_time, eval_every, target)
    trace = RunTrace(model.n)
    report.trace = trace
    everything = np.arange(m)

    x = objective.x0.copy() if x0 is None else np.array(x0, dtype=float)
    k, t = 0, 0.0
    reason = mon.observe(k, t, x)
    if reason is None:
        res = timer.result(objective.full_gradient(x), timer.block_sizes, PREPROCESS, 1, everything)
        trace.add(PREPROCESS, t, res, "full")
        g = res.g
        t += res.duration
    while reason is None:
        x_new = x - gamma * g
        if p >= 1.0 or coin.random() < p:
            res = timer.result(objective.full_gradient(x_new), timer.block_sizes, k, 1, everything)
            g = res.g
            kind = "full"
        else:
            idx = draws.integers(0, m, size=S)
            counts = np.bincount(timer.owner[idx], minlength=model.n)
            diff = (objective.gradient_sum(idx, x_new) - objective.gradient_sum(idx, x)) / S
            res = timer.result(diff, counts, k, 2, idx)
            g = g + diff
            kind = "diff"
        trace.add(k, t, res, kind)
        x = x_new
        k += 1
        t += res.duration
        reason = mon.observe(k, t, x)
    mon.finish(reason, k, t, x)
    return report


def run_gd_baselines(objective, model, variant="hero", gamma=None, eps=None, max_iters=None,
                     max_time=None, target=None, eval_every=1, x0=None, seed=0):
    """Exact gradient descent timed as one fastest worker (``hero``) or an equal split (``soviet``)."""
    if variant not in ("hero", "soviet"):
        raise ValueError(f"unknown GD variant {variant!r}")
    m = objective.m
    if gamma is None:
        gamma = 1.0 / objective.hints.L_minus
    timer = _SovietTimer(model, m, seed)
    report = OptimizerReport(f"{variant}_gd", params=dict(gamma=gamma, variant=variant))
    mon = _Monitor(objective, report, eps, max_iters, max_time, eval_every, target)
    trace = RunTrace(model.n)
    report.trace = trace
    everything = np.arange(m)

    def phase(g, k):
        if variant == "soviet":
            return timer.result(g, timer.block_sizes, k, 1, everything)
        taus = model.bounds(k)
        w = int(np.argmin(taus))
        counts = np.zeros(model.n, dtype=np.int64)
        counts[w] = m
        busy = np.zeros(model.n)
        busy[w] = m * taus[w]
        return CollectionResult(g=g, duration=float(busy[w]), oracle_calls=counts, aggregated=m,
                                completions=m, dispatches=1, busy_time=busy, indices=everything)

    x = objective.x0.copy() if x0 is None else np.array(x0, dtype=float)
    k, t = 0, 0.0
    reason = mon.observe(k, t, x)
    while reason is None:
        res = phase(objective.full_gradient(x), k)
        trace.add(k, t, res, "full")
        x = x - gamma * res.g
        k += 1
        t += res.duration
        reason = mon.observe(k, t, x)
    mon.finish(reason, k, t, x)
    return report


def run_asynchronous_sgd(objective, model, gamma, eps=None, max_iters=None, max_time=None,
                         target=None, seed=0, eval_every=1, x0=None):
    """Server applies one stale stochastic gradient per completion.

    Each worker holds the iterate it last read and a uniformly drawn
    component; ``extras["delays"]`` lists the staleness of every update.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    m, n = objective.m, model.n
    index_bank = StreamBank(seed, 1, n).generators
    duration_bank = StreamBank(seed, 2, n).generators
    report = OptimizerReport("asynchronous_sgd", params=dict(gamma=gamma, seed=seed))
    mon = _Monitor(objective, report, eps, max_iters, max_time, eval_every, target)
    trace = RunTrace(n)
    report.trace = trace
    delays = []

    x = objective.x0.copy() if x0 is None else np.array(x0, dtype=float)
    k = 0
    clock = SimClock(n)
    snapshot = [None] * n
    read_at = [0] * n
    started = [0.0] * n
    last_len = [0.0] * n

    def dispatch(w):
        j = min(int(index_bank[w].random() * m), m - 1)
        snapshot[w] = x
        read_at[w] = k
        started[w] = clock.now
        last_len[w] = task_duration(model, w, k, duration_bank[w] if model.stochastic else None)
        clock.assign(w, j, last_len[w])

    reason = mon.observe(k, 0.0, x)
    if reason is None:
        for w in range(n):
            dispatch(w)
    while reason is None:
        event = clock.next_completion()
        if event is None:
            raise NoProgressError()
        now, w, j = event
        calls = np.zeros(n, dtype=np.int64)
        calls[w] = 1
        busy = np.zeros(n)
        busy[w] = last_len[w]
        res = CollectionResult(g=objective.component_gradient(j, snapshot[w]),
                               duration=now - (trace.total_time if trace.records else 0.0),
                               oracle_calls=calls, aggregated=1, completions=1, dispatches=1,
                               busy_time=busy, indices=np.array([j]))
        trace.add(k, now - res.duration, res, "async")
        delays.append(k - read_at[w])
        x = x - gamma * res.g
        k += 1
        reason = mon.observe(k, now, x)
        if reason is None:
            dispatch(w)
    mon.finish(reason, k, clock.now, x)
    report.extras["delays"] = delays
    return report
