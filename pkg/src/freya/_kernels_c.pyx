# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled schedule kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport isinf, INFINITY
from libc.stdint cimport int64_t, uintptr_t
from numpy.random cimport bitgen_t

from .simclock import NoProgressError

cnp.import_array()


def bitgen_pointers(bitgens):
    """Raw ``bitgen_t*`` addresses; the caller keeps ``bitgens`` alive."""
    out = np.empty(len(bitgens), dtype=np.uint64)
    cdef Py_ssize_t i
    for i, bg in enumerate(bitgens):
        out[i] = <uintptr_t> PyCapsule_GetPointer(bg.capsule, "BitGenerator")
    return out


cdef struct Heap:
    double* t
    int64_t* seq
    int64_t* w
    Py_ssize_t size


cdef inline bint _less(Heap* h, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    if h.t[a] < h.t[b]:
        return True
    if h.t[a] == h.t[b] and h.seq[a] < h.seq[b]:
        return True
    return False


cdef inline void _swap(Heap* h, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    cdef double tt = h.t[a]
    cdef int64_t ss = h.seq[a]
    cdef int64_t ww = h.w[a]
    h.t[a] = h.t[b]; h.seq[a] = h.seq[b]; h.w[a] = h.w[b]
    h.t[b] = tt; h.seq[b] = ss; h.w[b] = ww


cdef inline void _push(Heap* h, double t, int64_t seq, int64_t w) noexcept nogil:
    cdef Py_ssize_t i = h.size, parent
    h.t[i] = t; h.seq[i] = seq; h.w[i] = w
    h.size += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(h, i, parent):
            _swap(h, i, parent)
            i = parent
        else:
            break


cdef inline void _pop(Heap* h, double* t, int64_t* w) noexcept nogil:
    cdef Py_ssize_t i = 0, l, r, best
    t[0] = h.t[0]
    w[0] = h.w[0]
    h.size -= 1
    if h.size > 0:
        h.t[0] = h.t[h.size]; h.seq[0] = h.seq[h.size]; h.w[0] = h.w[h.size]
        while True:
            l = 2 * i + 1
            r = l + 1
            best = i
            if l < h.size and _less(h, l, best):
                best = l
            if r < h.size and _less(h, r, best):
                best = r
            if best == i:
                break
            _swap(h, i, best)
            i = best


cdef inline int64_t _below(bitgen_t* g, int64_t k) noexcept nogil:
    cdef int64_t j = <int64_t>(g.next_double(g.state) * k)
    if j >= k:
        j = k - 1
    return j


cdef inline double _duration(double base, double low, bint stochastic, bitgen_t* g) noexcept nogil:
    if not stochastic or isinf(base):
        return base
    return base * (low + (1.0 - low) * g.next_double(g.state))


cdef class _Setup:
    cdef cnp.ndarray ht, hs, hw, idx_ptrs, dur_ptrs
    cdef Heap heap
    cdef bint stochastic
    cdef double low

    def __init__(self, Py_ssize_t n, low, index_bank, duration_bank):
        self.ht = np.empty(n, dtype=np.float64)
        self.hs = np.empty(n, dtype=np.int64)
        self.hw = np.empty(n, dtype=np.int64)
        self.heap.t = <double*> cnp.PyArray_DATA(self.ht)
        self.heap.seq = <int64_t*> cnp.PyArray_DATA(self.hs)
        self.heap.w = <int64_t*> cnp.PyArray_DATA(self.hw)
        self.heap.size = 0
        self.idx_ptrs = np.ascontiguousarray(index_bank.pointers)
        self.stochastic = low is not None
        self.low = 0.0 if low is None else float(low)
        if self.stochastic:
            self.dur_ptrs = np.ascontiguousarray(duration_bank.pointers)
        else:
            self.dur_ptrs = self.idx_ptrs


def collect_first(Py_ssize_t S, int64_t m, durs_in, low, index_bank, duration_bank):
    durs_arr = np.ascontiguousarray(durs_in, dtype=np.float64)
    cdef double[::1] durs = durs_arr
    cdef Py_ssize_t n = durs.shape[0]
    if not np.isfinite(durs_arr).any():
        raise NoProgressError()
    cdef _Setup st = _Setup(n, low, index_bank, duration_bank)
    cdef cnp.uint64_t[::1] iptr = st.idx_ptrs
    cdef cnp.uint64_t[::1] dptr = st.dur_ptrs
    cdef Heap* h = &st.heap
    picked_arr = np.empty(S, dtype=np.int64)
    cdef int64_t[::1] picked = picked_arr
    calls_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] calls = calls_arr
    busy_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] busy = busy_arr
    cdef double[::1] task_len = np.empty(n, dtype=np.float64)
    cdef int64_t[::1] task = np.empty(n, dtype=np.int64)
    cdef int64_t seq = 0, dispatches = 0, w
    cdef Py_ssize_t got = 0
    cdef double now = 0.0, t
    cdef bitgen_t* g
    cdef bint stoch = st.stochastic
    cdef double lo = st.low
    cdef bint stalled = False

    with nogil:
        for w in range(n):
            g = <bitgen_t*> <uintptr_t> iptr[w]
            task[w] = _below(g, m)
            task_len[w] = _duration(durs[w], lo, stoch, <bitgen_t*> <uintptr_t> dptr[w])
            if not isinf(task_len[w]):
                _push(h, now + task_len[w], seq, w)
            seq += 1
            dispatches += 1
        while got < S:
            if h.size == 0:
                stalled = True
                break
            _pop(h, &t, &w)
            now = t
            calls[w] += 1
            busy[w] += task_len[w]
            picked[got] = task[w]
            got += 1
            g = <bitgen_t*> <uintptr_t> iptr[w]
            task[w] = _below(g, m)
            task_len[w] = _duration(durs[w], lo, stoch, <bitgen_t*> <uintptr_t> dptr[w])
            if not isinf(task_len[w]):
                _push(h, now + task_len[w], seq, w)
            seq += 1
            dispatches += 1
    if stalled:
        raise NoProgressError()
    return now, picked_arr, calls_arr, busy_arr, dispatches


def collect_distinct(counts_in, durs_in, low, index_bank, duration_bank):
    counts = np.ascontiguousarray(counts_in, dtype=np.int64)
    durs_arr = np.ascontiguousarray(durs_in, dtype=np.float64)
    cdef double[::1] durs = durs_arr
    cdef Py_ssize_t n = durs.shape[0]
    if not np.isfinite(durs_arr).any():
        raise NoProgressError()
    cdef int64_t total = int(counts.sum())
    if total <= 0:
        raise ValueError("multiset must be non-empty")
    cdef _Setup st = _Setup(n, low, index_bank, duration_bank)
    cdef cnp.uint64_t[::1] iptr = st.idx_ptrs
    cdef cnp.uint64_t[::1] dptr = st.dur_ptrs
    cdef Heap* h = &st.heap

    cdef int64_t[::1] start = np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64)
    cdef int64_t[::1] left = counts.copy()
    cdef int64_t[::1] slot_value = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
    cdef int64_t[::1] rem = np.arange(total, dtype=np.int64)
    cdef int64_t[::1] pos = np.arange(total, dtype=np.int64)
    cdef int64_t remaining = total

    order_arr = np.empty(total, dtype=np.int64)
    cdef int64_t[::1] order = order_arr
    calls_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] calls = calls_arr
    busy_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] busy = busy_arr
    cdef double[::1] task_len = np.empty(n, dtype=np.float64)
    cdef int64_t[::1] task = np.empty(n, dtype=np.int64)
    cdef int64_t seq = 0, dispatches = 0, w, v, slot, p, last
    cdef Py_ssize_t got = 0
    cdef double now = 0.0, t
    cdef bitgen_t* g
    cdef bint stoch = st.stochastic
    cdef double lo = st.low
    cdef bint stalled = False

    with nogil:
        for w in range(n):
            g = <bitgen_t*> <uintptr_t> iptr[w]
            task[w] = slot_value[rem[_below(g, remaining)]]
            task_len[w] = _duration(durs[w], lo, stoch, <bitgen_t*> <uintptr_t> dptr[w])
            if not isinf(task_len[w]):
                _push(h, now + task_len[w], seq, w)
            seq += 1
            dispatches += 1
        while remaining > 0:
            if h.size == 0:
                stalled = True
                break
            _pop(h, &t, &w)
            now = t
            calls[w] += 1
            busy[w] += task_len[w]
            v = task[w]
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
            g = <bitgen_t*> <uintptr_t> iptr[w]
            task[w] = slot_value[rem[_below(g, remaining)]]
            task_len[w] = _duration(durs[w], lo, stoch, <bitgen_t*> <uintptr_t> dptr[w])
            if not isinf(task_len[w]):
                _push(h, now + task_len[w], seq, w)
            seq += 1
            dispatches += 1
    if stalled:
        raise NoProgressError()
    return now, order_arr, calls_arr, busy_arr, dispatches
