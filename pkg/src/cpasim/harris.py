"""Harris (graphical) construction: pre-sampled Poisson clocks and replay.

Clocks are numbered in a fixed order: infection clocks of edges ``0..E-1``,
recovery clocks of vertices ``E..E+V-1``, avoidance clocks of edges
``E+V..2E+V-1``.  A trace stores every arrival on ``[0, horizon]`` merged in
time order, with ties (which have probability zero) broken by clock number.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from . import rng as _rng
from .core import Configuration, EventKind, Params, Topology, ValidationError, validate_configuration

KIND_INFECT = 0
KIND_RECOVER = 1
KIND_BLOCK = 2


@dataclass
class HarrisTrace:
    """Merged arrival list of all clocks of one graphical representation."""

    times: np.ndarray
    clocks: np.ndarray
    n_edges: int
    n_vertices: int
    horizon: float

    def __len__(self):
        return int(self.times.shape[0])

    def kinds(self) -> np.ndarray:
        k = np.full(self.clocks.shape, KIND_BLOCK, dtype=np.int8)
        k[self.clocks < self.n_edges + self.n_vertices] = KIND_RECOVER
        k[self.clocks < self.n_edges] = KIND_INFECT
        return k

    def targets(self) -> np.ndarray:
        c = self.clocks
        E, V = self.n_edges, self.n_vertices
        return np.where(c < E, c, np.where(c < E + V, c - E, c - E - V))

    def infection_times(self, edge: int) -> np.ndarray:
        return self.times[self.clocks == edge]

    def recovery_times(self, vertex: int) -> np.ndarray:
        return self.times[self.clocks == self.n_edges + vertex]

    def avoidance_times(self, edge: int) -> np.ndarray:
        return self.times[self.clocks == self.n_edges + self.n_vertices + edge]

    def events(self) -> list[tuple[float, EventKind, int]]:
        names = {KIND_INFECT: EventKind.INFECT, KIND_RECOVER: EventKind.RECOVER, KIND_BLOCK: EventKind.BLOCK}
        return [(float(t), names[int(k)], int(g)) for t, k, g in zip(self.times, self.kinds(), self.targets())]


def trace_from_events(events, topo: Topology, horizon: float) -> HarrisTrace:
    """Build a trace from ``(time, EventKind, target)`` triples (hand-made scenarios)."""
    E, V = topo.n_edges, topo.n_vertices
    off = {EventKind.INFECT: 0, EventKind.RECOVER: E, EventKind.BLOCK: E + V}
    times = np.array([float(t) for t, _, _ in events])
    clocks = np.array([off[k] + int(g) for _, k, g in events], dtype=np.int64)
    if times.size and (times.min() < 0 or times.max() > horizon):
        raise ValidationError("arrival outside [0, horizon]")
    order = np.lexsort((clocks, times))
    return HarrisTrace(times[order], clocks[order], E, V, float(horizon))


@njit(cache=True)
def _sample(n_edges, n_vertices, lam, alpha, horizon, state, tbuf, cbuf):
    """Fill buffers with all arrivals; returns the count (or -1 if the buffers overflow)."""
    n = 0
    cap = tbuf.shape[0]
    n_clocks = 2 * n_edges + n_vertices
    for c in range(n_clocks):
        if c < n_edges:
            rate = lam
        elif c < n_edges + n_vertices:
            rate = 1.0
        else:
            rate = alpha
        if rate <= 0.0:
            continue
        t = _rng.next_exponential(state) / rate
        while t <= horizon:
            if n >= cap:
                return -1
            tbuf[n] = t
            cbuf[n] = c
            n += 1
            t += _rng.next_exponential(state) / rate
    return n


@njit(cache=True)
def _merge(tbuf, cbuf, n):
    order = np.argsort(tbuf[:n], kind="mergesort")
    return tbuf[:n][order], cbuf[:n][order]


@njit(cache=True)
def _replay(times, clocks, n, x, e, src, dst, out_ptr, out_edges, n_edges, n_vertices):
    for i in range(n):
        c = clocks[i]
        if c < n_edges:
            if e[c] == 1 and x[src[c]] == 1 and x[dst[c]] == 0:
                x[dst[c]] = 1
        elif c < n_edges + n_vertices:
            v = c - n_edges
            if x[v] == 1:
                x[v] = 0
                for p in range(out_ptr[v], out_ptr[v + 1]):
                    e[out_edges[p]] = 1
        else:
            k = c - n_edges - n_vertices
            if e[k] == 1 and x[src[k]] == 1 and x[dst[k]] == 0:
                e[k] = 0


def _buffer_size(topo: Topology, params: Params, horizon: float) -> int:
    mean = horizon * (topo.n_edges * (params.lam + params.alpha) + topo.n_vertices)
    return int(mean + 12 * np.sqrt(mean + 1) + 64)


def harris_sample(topo: Topology, params: Params, horizon: float, master_seed: int = 0,
                  replica_index: int = 0) -> HarrisTrace:
    """Sample independent Poisson clocks (rates lam, 1, alpha) on ``[0, horizon]``."""
    if not (horizon > 0):
        raise ValidationError("horizon must be positive")
    state = _rng.new_stream(master_seed, replica_index)
    size = _buffer_size(topo, params, horizon)
    while True:
        tbuf = np.empty(size)
        cbuf = np.empty(size, dtype=np.int64)
        n = _sample(topo.n_edges, topo.n_vertices, params.lam, params.alpha, horizon, state, tbuf, cbuf)
        if n >= 0:
            break
        state = _rng.new_stream(master_seed, replica_index)
        size *= 2
    t, c = _merge(tbuf, cbuf, n)
    return HarrisTrace(t, c, topo.n_edges, topo.n_vertices, float(horizon))


def harris_replay(trace: HarrisTrace, cfg0: Configuration, topo: Topology) -> Configuration:
    """Read the configuration at the horizon off a trace, applying only enabled arrivals."""
    if trace.n_edges != topo.n_edges or trace.n_vertices != topo.n_vertices:
        raise ValidationError("trace and topology disagree")
    validate_configuration(cfg0, topo)
    cfg = cfg0.copy()
    _replay(trace.times, trace.clocks, len(trace), cfg.x, cfg.e, topo.src.copy(), topo.dst.copy(),
            topo.out_ptr, topo.out_edges, topo.n_edges, topo.n_vertices)
    return cfg


@njit(cache=True, nogil=True)
def _replay_counts(n_edges, n_vertices, src, dst, out_ptr, out_edges, x0, e0, lam, alpha, horizon,
                   base, first, count, cap, out):
    tbuf = np.empty(cap)
    cbuf = np.empty(cap, np.int64)
    x = np.empty_like(x0)
    e = np.empty_like(e0)
    state = np.empty(1, np.uint64)
    for r in range(count):
        state[0] = _rng.key_for(base, first + r)
        n = _sample(n_edges, n_vertices, lam, alpha, horizon, state, tbuf, cbuf)
        if n < 0:
            out[r] = -1
            continue
        t, c = _merge(tbuf, cbuf, n)
        x[:] = x0
        e[:] = e0
        _replay(t, c, n, x, e, src, dst, out_ptr, out_edges, n_edges, n_vertices)
        out[r] = x.sum()


def replay_infected_counts(cfg0: Configuration, topo: Topology, params: Params, horizon: float,
                           replicas: int, master_seed: int = 0, first_replica: int = 0) -> np.ndarray:
    """``|x_horizon|`` for many independent traces; trace ``r`` matches ``harris_sample(..., replica_index=first_replica + r)``."""
    validate_configuration(cfg0, topo)
    cap = 4 * _buffer_size(topo, params, horizon)
    out = np.zeros(replicas, np.int64)
    _replay_counts(topo.n_edges, topo.n_vertices, topo.src.copy(), topo.dst.copy(), topo.out_ptr,
                   topo.out_edges, cfg0.x, cfg0.e, params.lam, params.alpha, float(horizon),
                   _rng.batch_base(master_seed), np.int64(first_replica), replicas, cap, out)
    if np.any(out < 0):
        raise RuntimeError("trace buffer overflow")
    return out


# --------------------------------------------------------------------------
# monotonicity


@njit(cache=True)
def _final_masks(t, c, n, n_edges, n_vertices, src, dst, out_ptr, out_edges, masks):
    nsub = 1 << n_vertices
    x = np.empty(n_vertices, np.int8)
    e = np.empty(n_edges, np.int8)
    for s in range(nsub):
        for v in range(n_vertices):
            x[v] = (s >> v) & 1
        e[:] = 1
        _replay(t, c, n, x, e, src, dst, out_ptr, out_edges, n_edges, n_vertices)
        m = 0
        for v in range(n_vertices):
            if x[v] == 1:
                m |= 1 << v
        masks[s] = m


@njit(cache=True)
def _find_violation(masks):
    nsub = masks.shape[0]
    for b in range(nsub):
        for a in range(nsub):
            if a != b and (a & b) == a and (masks[a] & ~masks[b]) != 0:
                return a, b
    return -1, -1


@njit(cache=True)
def _witness_kernel(n_edges, n_vertices, src, dst, out_ptr, out_edges, lam, alpha, horizon, base,
                    budget, cap):
    tbuf = np.empty(cap)
    cbuf = np.empty(cap, np.int64)
    masks = np.empty(1 << n_vertices, np.int64)
    state = np.empty(1, np.uint64)
    for r in range(budget):
        state[0] = _rng.key_for(base, r)
        n = _sample(n_edges, n_vertices, lam, alpha, horizon, state, tbuf, cbuf)
        if n < 0:
            return -2, r
        t, c = _merge(tbuf, cbuf, n)
        _final_masks(t, c, n, n_edges, n_vertices, src, dst, out_ptr, out_edges, masks)
        a, b = _find_violation(masks)
        if a >= 0:
            return r, r
    return -1, budget


@dataclass
class MonotonicityWitness:
    """Trace plus nested initial sets ``small ⊂ large`` whose final sets are not nested."""

    trace: HarrisTrace
    replica_index: int
    small: frozenset
    large: frozenset
    final_small: frozenset
    final_large: frozenset
    traces_examined: int


def final_sets(trace: HarrisTrace, topo: Topology) -> dict:
    """Final infected set for every initial infected subset (all edges active at time 0)."""
    if topo.n_vertices > 20:
        raise ValidationError("subset enumeration limited to 20 vertices")
    masks = np.empty(1 << topo.n_vertices, np.int64)
    _final_masks(trace.times, trace.clocks, len(trace), topo.n_edges, topo.n_vertices, topo.src.copy(),
                 topo.dst.copy(), topo.out_ptr, topo.out_edges, masks)
    return {s: int(m) for s, m in enumerate(masks)}


def _bits(m: int) -> frozenset:
    return frozenset(i for i in range(m.bit_length()) if (m >> i) & 1)


def nonmonotone_witness_search(topo: Topology, params: Params, horizon: float, budget: int,
                               master_seed: int = 0) -> Optional[MonotonicityWitness]:
    """Search sampled traces for a failure of monotonicity in the initial infected set.

    For each trace, every initial subset (all edges active) is replayed and
    every nested pair ``A ⊂ B`` is checked for ``F(A) ⊄ F(B)``.  Trace ``r``
    is ``harris_sample(topo, params, horizon, master_seed, r)``.  Returns
    ``None`` when no witness occurs among the first ``budget`` traces.
    """
    if budget < 0:
        raise ValidationError("budget must be >= 0")
    if budget == 0:
        return None
    if topo.n_vertices > 12:
        raise ValidationError("witness search enumerates subsets; use at most 12 vertices")
    cap = 4 * _buffer_size(topo, params, horizon)
    found, _ = _witness_kernel(topo.n_edges, topo.n_vertices, topo.src.copy(), topo.dst.copy(),
                               topo.out_ptr, topo.out_edges, params.lam, params.alpha, float(horizon),
                               _rng.batch_base(master_seed), int(budget), cap)
    if found == -2:
        raise RuntimeError("trace buffer overflow")
    if found < 0:
        return None
    trace = harris_sample(topo, params, horizon, master_seed, int(found))
    masks = final_sets(trace, topo)
    for b in range(len(masks)):
        for a in range(len(masks)):
            if a != b and (a & b) == a and masks[a] & ~masks[b]:
                return MonotonicityWitness(trace, int(found), _bits(a), _bits(b), _bits(masks[a]),
                                           _bits(masks[b]), int(found) + 1)
    raise AssertionError("kernel and Python disagree on witness")
