"""Contact process with avoidance on finite directed graphs.

State is a pair ``(x, e)``: ``x[v] = 1`` when vertex ``v`` is infected and
``e[k] = 1`` when directed edge ``k = (i, j)`` is active.  The dynamics are

* infection  ``x[j]: 0 -> 1`` at rate ``lam`` per active in-edge from an infected source,
* recovery   ``x[i]: 1 -> 0`` at rate 1,
* blocking   ``e[k]: 1 -> 0`` at rate ``alpha`` while ``x[i] = 1`` and ``x[j] = 0``,
* reactivation ``e[k]: 0 -> 1`` instantly when the source ``i`` recovers.

Two engines live here.  :func:`gillespie_step` is a small pure-Python
reference used by tests and the exact oracle.  :func:`simulate_batch` is the
production engine: a numba kernel that keeps the recoverable vertices and the
frontier edges (infected source, healthy target, active) in indexed sets, so
each event costs O(degree) and sampling the next event is O(1).
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

from . import rng as _rng

STATUS_EXTINCT = 0
STATUS_ALIVE = 1
STATUS_BOUNDARY = 2
STATUS_PAUSED = 3


class ValidationError(ValueError):
    """Invalid parameters, topology sizes or configurations."""


class AbsorbingStateError(RuntimeError):
    """Raised when a step is requested from a state with zero total rate."""


@dataclass(frozen=True)
class Params:
    """Infection rate ``lam`` and avoidance rate ``alpha``."""

    lam: float
    alpha: float

    def __post_init__(self):
        for name in ("lam", "alpha"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float, np.floating, np.integer))) or not math.isfinite(val) or val < 0:
                raise ValidationError(f"{name} must be a finite non-negative number, got {val!r}")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "alpha", float(self.alpha))


# --------------------------------------------------------------------------
# topology


@dataclass
class Topology:
    """Directed graph with dense edge indices and CSR adjacency.

    ``labels`` maps internal vertex indices ``0..V-1`` to the user-facing
    names (``-W..W`` for a path window).  ``rev[k]`` is the index of the
    reversed edge or ``-1``.
    """

    kind: str
    size: int
    n_vertices: int
    edges: np.ndarray  # (E, 2) int64
    labels: np.ndarray
    out_ptr: np.ndarray = field(repr=False)
    out_edges: np.ndarray = field(repr=False)
    in_ptr: np.ndarray = field(repr=False)
    in_edges: np.ndarray = field(repr=False)
    rev: np.ndarray = field(repr=False)
    edge_index: dict = field(repr=False)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    def out_of(self, v: int) -> np.ndarray:
        return self.out_edges[self.out_ptr[v]:self.out_ptr[v + 1]]

    def into(self, v: int) -> np.ndarray:
        return self.in_edges[self.in_ptr[v]:self.in_ptr[v + 1]]

    def vertex(self, label: int) -> int:
        """Internal index of a labelled vertex."""
        hits = np.flatnonzero(self.labels == label)
        if hits.size != 1:
            raise ValidationError(f"no vertex labelled {label}")
        return int(hits[0])


def _csr(n: int, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(keys, kind="stable").astype(np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=ptr[1:])
    return ptr, order


def custom_topology(n_vertices: int, edges: Iterable[tuple[int, int]], kind: str = "custom",
                    size: Optional[int] = None, labels: Optional[Sequence[int]] = None) -> Topology:
    """Topology from an explicit directed edge list (duplicates are dropped, order kept)."""
    if n_vertices < 1:
        raise ValidationError("graph needs at least one vertex")
    seen: dict = {}
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise ValidationError(f"self-loop at {i}")
        if not (0 <= i < n_vertices and 0 <= j < n_vertices):
            raise ValidationError(f"edge ({i}, {j}) out of range")
        seen.setdefault((i, j), len(seen))
    arr = np.array(list(seen), dtype=np.int64).reshape(-1, 2)
    out_ptr, out_edges = _csr(n_vertices, arr[:, 0])
    in_ptr, in_edges = _csr(n_vertices, arr[:, 1])
    rev = np.array([seen.get((j, i), -1) for i, j in seen], dtype=np.int64)
    lab = np.arange(n_vertices, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    return Topology(kind=kind, size=n_vertices if size is None else size, n_vertices=n_vertices,
                    edges=arr, labels=lab, out_ptr=out_ptr, out_edges=out_edges, in_ptr=in_ptr,
                    in_edges=in_edges, rev=rev, edge_index=seen)


def build_topology(kind: str, size: int) -> Topology:
    """Build one of the standard graph families.

    Parameters
    ----------
    kind : {'cycle', 'star', 'path', 'line'}
        ``cycle`` is Z_n with both orientations of every nearest-neighbour
        bond.  ``star`` has centre 0 and leaves ``1..n-1``.  ``path`` is the
        window ``{-W..W}`` of Z.  ``line`` is a plain path on ``m`` vertices
        labelled ``0..m-1``.
    size : int
        ``n`` for cycle and star, ``W`` for path, ``m`` for line.
    """
    size = int(size)
    if kind == "cycle":
        if size < 2:
            raise ValidationError("cycle needs n >= 2")
        edges = []
        for i in range(size):
            j = (i + 1) % size
            edges += [(i, j), (j, i)]
        return custom_topology(size, edges, kind, size)
    if kind == "star":
        if size < 2:
            raise ValidationError("star needs n >= 2")
        edges = []
        for j in range(1, size):
            edges += [(0, j), (j, 0)]
        return custom_topology(size, edges, kind, size)
    if kind == "path":
        if size < 1:
            raise ValidationError("path window needs W >= 1")
        m = 2 * size + 1
        edges = []
        for i in range(m - 1):
            edges += [(i, i + 1), (i + 1, i)]
        return custom_topology(m, edges, kind, size, labels=np.arange(-size, size + 1))
    if kind == "line":
        if size < 1:
            raise ValidationError("line needs m >= 1")
        edges = []
        for i in range(size - 1):
            edges += [(i, i + 1), (i + 1, i)]
        return custom_topology(size, edges, kind, size)
    raise ValidationError(f"unknown topology kind {kind!r}")


# --------------------------------------------------------------------------
# configurations and events


@dataclass
class Configuration:
    """Infection bits ``x`` (per vertex) and activity bits ``e`` (per edge)."""

    x: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int8).copy()
        self.e = np.asarray(self.e, dtype=np.int8).copy()

    def copy(self) -> "Configuration":
        return Configuration(self.x, self.e)

    def key(self) -> bytes:
        return self.x.tobytes() + b"|" + self.e.tobytes()

    def infected(self) -> int:
        return int(self.x.sum())

    def __eq__(self, other):
        return (isinstance(other, Configuration) and np.array_equal(self.x, other.x)
                and np.array_equal(self.e, other.e))


def initial_configuration(topo: Topology, infected: Iterable[int] | str = "all") -> Configuration:
    """All-edges-active configuration with the given vertex indices infected."""
    x = np.zeros(topo.n_vertices, dtype=np.int8)
    if isinstance(infected, str):
        if infected != "all":
            raise ValidationError(f"unknown infected selection {infected!r}")
        x[:] = 1
    else:
        for v in infected:
            x[int(v)] = 1
    return Configuration(x, np.ones(topo.n_edges, dtype=np.int8))


def validate_configuration(cfg: Configuration, topo: Topology) -> None:
    """Raise :class:`ValidationError` unless ``cfg`` is a reachable-type state."""
    if cfg.x.shape != (topo.n_vertices,) or cfg.e.shape != (topo.n_edges,):
        raise ValidationError("configuration shape does not match topology")
    if not (np.isin(cfg.x, (0, 1)).all() and np.isin(cfg.e, (0, 1)).all()):
        raise ValidationError("configuration bits must be 0 or 1")
    blocked = np.flatnonzero(cfg.e == 0)
    if blocked.size == 0:
        return
    if np.any(cfg.x[topo.src[blocked]] == 0):
        raise ValidationError("blocked edge with a healthy source")
    r = topo.rev[blocked]
    r = r[r >= 0]
    if np.any(cfg.e[r] == 0):
        raise ValidationError("both directions of a bond are blocked")


class EventKind(enum.Enum):
    INFECT = "infect"
    RECOVER = "recover"
    BLOCK = "block"


@dataclass(frozen=True)
class Event:
    """One transition; ``target`` is an edge index for INFECT/BLOCK, a vertex for RECOVER."""

    kind: EventKind
    target: int
    reactivated: tuple = ()


@dataclass
class RateTable:
    entries: list
    total: float

    def as_dict(self) -> dict:
        return {(ev.kind, ev.target): r for ev, r in self.entries}


def enabled_rates(cfg: Configuration, topo: Topology, params: Params) -> RateTable:
    """All events with positive rate, in a fixed order (recoveries, then per edge infect/block)."""
    validate_configuration(cfg, topo)
    entries = []
    for v in np.flatnonzero(cfg.x == 1):
        entries.append((Event(EventKind.RECOVER, int(v)), 1.0))
    for k in range(topo.n_edges):
        i, j = topo.edges[k]
        if cfg.x[i] == 1 and cfg.x[j] == 0 and cfg.e[k] == 1:
            if params.lam > 0:
                entries.append((Event(EventKind.INFECT, k), params.lam))
            if params.alpha > 0:
                entries.append((Event(EventKind.BLOCK, k), params.alpha))
    return RateTable(entries, float(sum(r for _, r in entries)))


def apply_event(cfg: Configuration, topo: Topology, event: Event) -> tuple[Configuration, Event]:
    """Apply ``event`` to a copy of ``cfg``; recovery reactivates the vertex's out-edges."""
    new = cfg.copy()
    if event.kind is EventKind.RECOVER:
        v = event.target
        new.x[v] = 0
        out = topo.out_of(v)
        react = tuple(int(k) for k in out if new.e[k] == 0)
        new.e[out] = 1
        return new, Event(event.kind, v, react)
    i, j = topo.edges[event.target]
    if event.kind is EventKind.INFECT:
        new.x[j] = 1
    else:
        new.e[event.target] = 0
    return new, event


def gillespie_step(cfg: Configuration, topo: Topology, params: Params,
                   rng: np.random.Generator) -> tuple[Configuration, Event, float]:
    """One direct-method step: exponential holding time, event chosen proportional to rate."""
    table = enabled_rates(cfg, topo, params)
    if table.total <= 0:
        raise AbsorbingStateError("no enabled event")
    dt = rng.exponential(1.0 / table.total)
    r = rng.random() * table.total
    acc = 0.0
    chosen = table.entries[-1][0]
    for ev, rate in table.entries:
        acc += rate
        if r < acc:
            chosen = ev
            break
    new, ev = apply_event(cfg, topo, chosen)
    return new, ev, dt


# --------------------------------------------------------------------------
# survival records


class Outcome(enum.Enum):
    EXTINCT = "extinct"
    ALIVE_AT_CUTOFF = "alive_at_tmax"
    BOUNDARY_HIT = "boundary_hit"


_STATUS_OUTCOME = {STATUS_EXTINCT: Outcome.EXTINCT, STATUS_ALIVE: Outcome.ALIVE_AT_CUTOFF,
                   STATUS_BOUNDARY: Outcome.BOUNDARY_HIT}


@dataclass(frozen=True)
class SurvivalRecord:
    """Result of one replica.  ``extinction_time`` is set only for extinct runs."""

    outcome: Outcome
    extinction_time: Optional[float]
    event_count: int
    master_seed: int
    replica_index: int
    end_time: float = 0.0

    def __post_init__(self):
        if (self.outcome is Outcome.EXTINCT) != (self.extinction_time is not None):
            raise ValueError("extinction_time must be present exactly for extinct runs")


# --------------------------------------------------------------------------
# numba engine


@njit(cache=True)
def _set_add(lst, pos, n, item):
    pos[item] = n
    lst[n] = item
    return n + 1


@njit(cache=True)
def _set_remove(lst, pos, n, item):
    p = pos[item]
    last = lst[n - 1]
    lst[p] = last
    pos[last] = p
    pos[item] = -1
    return n - 1


@njit(cache=True)
def _init_sets(x, e, src, dst, boundary, pinned, ilist, ipos, flist, fpos):
    """Fill the indexed sets from ``(x, e)``.

    Returns ``(n_i, n_f, n_pin, real, hit)``: sizes of the infected and
    frontier sets, number of pinned vertices, infected non-pinned count, and
    whether a boundary vertex is already infected.
    """
    n_i = 0
    n_f = 0
    n_pin = 0
    real = 0
    hit = False
    for v in range(x.shape[0]):
        ipos[v] = -1
        if pinned[v]:
            n_pin += 1
        if x[v] == 1:
            n_i = _set_add(ilist, ipos, n_i, v)
            if not pinned[v]:
                real += 1
                if boundary[v]:
                    hit = True
    for k in range(e.shape[0]):
        fpos[k] = -1
        if x[src[k]] == 1 and x[dst[k]] == 0 and e[k] == 1:
            n_f = _set_add(flist, fpos, n_f, k)
    return n_i, n_f, n_pin, real, hit


@njit(cache=True)
def _run_kernel(x, e, src, dst, out_ptr, out_edges, in_ptr, in_edges, lam, alpha, t_max,
                boundary, pinned, state, ilist, ipos, flist, fpos, max_events):
    """Advance ``(x, e)`` in place.

    Returns ``(status, time, events, real infected count, kind, target)``
    where ``kind``/``target`` describe the last event (0 infect with the newly
    infected vertex, 1 recover with the vertex, 2 block with the edge; -1 if
    none).  A positive ``max_events`` pauses the run with ``STATUS_PAUSED``
    after that many events; the event logic stays inline here because numba
    generates much slower code when it is factored into a helper.
    """
    la = lam + alpha
    n_i, n_f, n_pin, real, hit = _init_sets(x, e, src, dst, boundary, pinned, ilist, ipos, flist, fpos)
    t = 0.0
    events = 0
    kind = -1
    target = -1
    if hit:
        return STATUS_BOUNDARY, t, events, real, kind, target
    while True:
        if real == 0 and n_pin == 0:
            return STATUS_EXTINCT, t, events, real, kind, target
        if max_events > 0 and events >= max_events:
            return STATUS_PAUSED, t, events, real, kind, target
        total = n_i + (n_f * la if la > 0.0 else 0.0)
        if total <= 0.0:
            # frozen state (lam = alpha = 0 with only pinned sources)
            return STATUS_ALIVE, t_max, events, real, kind, target
        t += _rng.next_exponential(state) / total
        if t > t_max:
            return STATUS_ALIVE, t_max, events, real, kind, target
        events += 1
        r = _rng.next_uniform(state) * total
        if r < n_i:
            kind = 1
            idx = min(int(r), n_i - 1)
            target = ilist[idx]
            v = target
            if pinned[v]:
                for p in range(out_ptr[v], out_ptr[v + 1]):
                    k = out_edges[p]
                    if e[k] == 0:
                        e[k] = 1
                        if x[dst[k]] == 0:
                            n_f = _set_add(flist, fpos, n_f, k)
            else:
                x[v] = 0
                n_i = _set_remove(ilist, ipos, n_i, v)
                real -= 1
                for p in range(out_ptr[v], out_ptr[v + 1]):
                    k = out_edges[p]
                    e[k] = 1
                    if fpos[k] >= 0:
                        n_f = _set_remove(flist, fpos, n_f, k)
                for p in range(in_ptr[v], in_ptr[v + 1]):
                    k = in_edges[p]
                    if x[src[k]] == 1 and e[k] == 1:
                        n_f = _set_add(flist, fpos, n_f, k)
        else:
            r2 = (r - n_i) / la
            idx = min(int(r2), n_f - 1)
            k = flist[idx]
            if (r2 - idx) * la < lam:
                kind = 0
                w = dst[k]
                target = w
                x[w] = 1
                if not pinned[w]:
                    real += 1
                n_i = _set_add(ilist, ipos, n_i, w)
                for p in range(in_ptr[w], in_ptr[w + 1]):
                    k2 = in_edges[p]
                    if fpos[k2] >= 0:
                        n_f = _set_remove(flist, fpos, n_f, k2)
                for p in range(out_ptr[w], out_ptr[w + 1]):
                    k2 = out_edges[p]
                    if x[dst[k2]] == 0 and e[k2] == 1:
                        n_f = _set_add(flist, fpos, n_f, k2)
            else:
                kind = 2
                target = k
                e[k] = 0
                n_f = _set_remove(flist, fpos, n_f, k)
        if kind == 0 and boundary[target]:
            return STATUS_BOUNDARY, t, events, real, kind, target


@njit(cache=True, nogil=True)
def _batch_kernel(x0, e0, src, dst, out_ptr, out_edges, in_ptr, in_edges, lam, alpha, t_max,
                  boundary, pinned, base, first, lo, hi, status, times, events, counts,
                  keep, fx, fe):
    nv = x0.shape[0]
    ne = e0.shape[0]
    x = np.empty(nv, np.int8)
    e = np.empty(ne, np.int8)
    ilist = np.empty(nv, np.int64)
    ipos = np.empty(nv, np.int64)
    flist = np.empty(max(ne, 1), np.int64)
    fpos = np.empty(max(ne, 1), np.int64)
    state = np.empty(1, np.uint64)
    for r in range(lo, hi):
        x[:] = x0
        e[:] = e0
        state[0] = _rng.key_for(base, first + r)
        s, t, ev, c, _, _ = _run_kernel(x, e, src, dst, out_ptr, out_edges, in_ptr, in_edges, lam,
                                        alpha, t_max, boundary, pinned, state, ilist, ipos, flist,
                                        fpos, 0)
        status[r] = s
        times[r] = t
        events[r] = ev
        counts[r] = c
        if keep:
            fx[r, :] = x
            fe[r, :] = e


@dataclass
class BatchResult:
    """Per-replica arrays from :func:`simulate_batch`.

    ``status`` uses ``STATUS_EXTINCT``/``STATUS_ALIVE``/``STATUS_BOUNDARY``;
    ``time`` is the extinction time, ``t_max``, or the boundary-hit time;
    ``final_count`` counts infected (non-pinned) vertices at the end.
    """

    status: np.ndarray
    time: np.ndarray
    events: np.ndarray
    final_count: np.ndarray
    master_seed: int
    first_replica: int
    final_x: Optional[np.ndarray] = None
    final_e: Optional[np.ndarray] = None

    def __len__(self):
        return int(self.status.shape[0])

    def record(self, i: int) -> SurvivalRecord:
        outcome = _STATUS_OUTCOME[int(self.status[i])]
        t = float(self.time[i])
        return SurvivalRecord(outcome, t if outcome is Outcome.EXTINCT else None, int(self.events[i]),
                              self.master_seed, self.first_replica + i, t)

    def records(self) -> list[SurvivalRecord]:
        return [self.record(i) for i in range(len(self))]


def _mask(topo: Topology, vertices) -> np.ndarray:
    m = np.zeros(topo.n_vertices, dtype=np.bool_)
    if vertices is not None:
        for v in vertices:
            m[int(v)] = True
    return m


def simulate_batch(cfg0: Configuration, topo: Topology, params: Params, replicas: int,
                   master_seed: int = 0, t_max: float = math.inf, boundary=None, pinned=None,
                   first_replica: int = 0, threads: int = 1, keep_final: bool = False) -> BatchResult:
    """Run ``replicas`` independent copies from ``cfg0``.

    Replica ``r`` draws from the stream keyed by ``(master_seed, first_replica + r)``,
    so results do not depend on ``threads`` or on how the range is split.

    Parameters
    ----------
    boundary : iterable of int, optional
        Vertex indices whose infection stops the run with status boundary.
    pinned : iterable of int, optional
        Vertices that never become healthy.  Their rate-1 clock still rings
        and reactivates their blocked out-edges, which models an always-infected
        outside neighbour that keeps being reinfected.
    """
    validate_configuration(cfg0, topo)
    if replicas < 0:
        raise ValidationError("replicas must be >= 0")
    if not (t_max > 0):
        raise ValidationError("t_max must be positive")
    pin = _mask(topo, pinned)
    if np.any(cfg0.x[pin] == 0):
        raise ValidationError("pinned vertices must start infected")
    bnd = _mask(topo, boundary)
    status = np.zeros(replicas, np.int8)
    times = np.zeros(replicas)
    events = np.zeros(replicas, np.int64)
    counts = np.zeros(replicas, np.int64)
    fx = np.zeros((replicas if keep_final else 0, topo.n_vertices), np.int8)
    fe = np.zeros((replicas if keep_final else 0, topo.n_edges), np.int8)
    base = _rng.batch_base(master_seed)
    args = (cfg0.x, cfg0.e, topo.src.copy(), topo.dst.copy(), topo.out_ptr, topo.out_edges,
            topo.in_ptr, topo.in_edges, params.lam, params.alpha, float(t_max), bnd, pin, base,
            np.int64(first_replica))
    tail = (status, times, events, counts, keep_final, fx, fe)
    threads = max(1, int(threads))
    if threads == 1 or replicas < 2 * threads:
        _batch_kernel(*args, 0, replicas, *tail)
    else:
        cuts = np.linspace(0, replicas, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            futs = [pool.submit(_batch_kernel, *args, int(cuts[i]), int(cuts[i + 1]), *tail)
                    for i in range(threads)]
            for f in futs:
                f.result()
    return BatchResult(status, times, events, counts, master_seed, first_replica,
                       fx if keep_final else None, fe if keep_final else None)


def run_to_absorption(cfg0: Configuration, topo: Topology, params: Params, t_max: float = math.inf,
                      boundary=None, master_seed: int = 0, replica_index: int = 0) -> SurvivalRecord:
    """Single replica until extinction, ``t_max``, or infection of a boundary vertex."""
    res = simulate_batch(cfg0, topo, params, 1, master_seed, t_max, boundary,
                         first_replica=replica_index)
    return res.record(0)


def simulate_final(cfg0: Configuration, topo: Topology, params: Params, t: float,
                   master_seed: int = 0, replica_index: int = 0) -> Configuration:
    """Configuration at time ``t`` for one replica (the all-healthy state if extinct earlier)."""
    res = simulate_batch(cfg0, topo, params, 1, master_seed, t, first_replica=replica_index,
                         keep_final=True)
    return Configuration(res.final_x[0], res.final_e[0])
