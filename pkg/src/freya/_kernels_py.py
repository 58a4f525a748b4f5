"""Pure-Python schedule kernels.

The kernels simulate *when* each worker finishes and *which* component it
was working on; they never touch gradients.  ``_kernels_c.pyx`` implements
the same functions and must produce bit-identical output.

Shared conventions
------------------
``durs[w]``  base seconds per task of worker w (``inf`` = never finishes).
``low``      ``None`` for deterministic times, else each task takes
             ``durs[w] * (low + (1 - low) * u)`` with ``u`` from the worker's
             duration stream.
Index draws use ``floor(u * k)`` on the worker's index stream.
"""

import math

import numpy as np

from .simclock import NoProgressError, SimClock


def _below(gen, k):
    j = int(gen.random() * k)
    return k - 1 if j >= k else j


def _make_duration(durs, low, duration_bank):
    if low is None:
        return lambda w: durs[w]
    gens = duration_bank.generators

    def draw(w):
        base = durs[w]
        if math.isinf(base):
            return base
        return base * (low + (1.0 - low) * gens[w].random())

    return draw


def collect_first(S, m, durs, low, index_bank, duration_bank):
    """Keep every worker busy on uniform draws from [m] until S results arrive.

    Returns ``(duration, picked, calls, busy, dispatches)``.
    """
    durs = [float(t) for t in durs]
    n = len(durs)
    if not any(math.isfinite(t) for t in durs):
        raise NoProgressError()
    gens = index_bank.generators
    duration = _make_duration(durs, low, duration_bank)
    clock = SimClock(n)
    task_len = [0.0] * n
    calls = np.zeros(n, dtype=np.int64)
    busy = np.zeros(n)
    picked = np.empty(S, dtype=np.int64)
    dispatches = 0

    def dispatch(w):
        nonlocal dispatches
        j = _below(gens[w], m)
        task_len[w] = duration(w)
        clock.assign(w, j, task_len[w])
        dispatches += 1

    for w in range(n):
        dispatch(w)
    got = 0
    while got < S:
        event = clock.next_completion()
        if event is None:
            raise NoProgressError()
        _, w, j = event
        calls[w] += 1
        busy[w] += task_len[w]
        picked[got] = j
        got += 1
        dispatch(w)
    return clock.now, picked, calls, busy, dispatches


def collect_distinct(counts, durs, low, index_bank, duration_bank):
    """Collect every element of a multiset exactly once.

    ``counts[v]`` is the multiplicity of value v.  Workers draw uniformly
    from the not-yet-collected part of the multiset; a finished value is
    aggregated only if some copy of it is still outstanding.

    Returns ``(duration, order, calls, busy, dispatches)`` where ``order``
    lists the aggregated values in arrival order.
    """
    durs = [float(t) for t in durs]
    n = len(durs)
    counts = np.asarray(counts, dtype=np.int64)
    if not any(math.isfinite(t) for t in durs):
        raise NoProgressError()
    total = int(counts.sum())
    if total <= 0:
        raise ValueError("multiset must be non-empty")
    gens = index_bank.generators
    duration = _make_duration(durs, low, duration_bank)

    # Slots of value v are start[v] .. start[v] + counts[v] - 1; remaining
    # slots of a value are always a prefix of its range.
    start = np.concatenate(([0], np.cumsum(counts)[:-1]))
    left = counts.copy()
    slot_value = np.repeat(np.arange(counts.size), counts)
    rem = list(range(total))
    pos = list(range(total))
    remaining = total

    clock = SimClock(n)
    task_len = [0.0] * n
    calls = np.zeros(n, dtype=np.int64)
    busy = np.zeros(n)
    order = np.empty(total, dtype=np.int64)
    dispatches = 0

    def dispatch(w):
        nonlocal dispatches
        slot = rem[_below(gens[w], remaining)]
        task_len[w] = duration(w)
        clock.assign(w, int(slot_value[slot]), task_len[w])
        dispatches += 1

    for w in range(n):
        dispatch(w)
    got = 0
    while remaining > 0:
        event = clock.next_completion()
        if event is None:
            raise NoProgressError()
        _, w, v = event
        calls[w] += 1
        busy[w] += task_len[w]
        if left[v] > 0:
            left[v] -= 1
            slot = start[v] + left[v]
            p = pos[slot]
            last = rem[remaining - 1]
            rem[p] = last
            pos[last] = p
            remaining -= 1
            order[got] = v
            got += 1
            if remaining == 0:
                break
        dispatch(w)
    return clock.now, order, calls, busy, dispatches
