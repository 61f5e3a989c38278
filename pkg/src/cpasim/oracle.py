"""Exact answers on tiny graphs and closed-form competing-exponential quantities.

The reachable state space from a starting configuration is enumerated by
breadth-first search over single events.  Mean extinction times then follow
from one sparse linear solve ``(-Q_TT) m = 1`` on the transient block.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import rng as _rng
from .core import (STATUS_PAUSED, Configuration, Params, Topology, ValidationError, _run_kernel,
                   apply_event, build_topology, enabled_rates, validate_configuration)

DEFAULT_STATE_CAP = 200_000


class StateSpaceTooLarge(RuntimeError):
    pass


class ReachabilityError(RuntimeError):
    """The absorbing set cannot be reached from some transient state."""


@dataclass
class StateSpace:
    """Reachable configurations with their outgoing transitions.

    ``transitions`` holds ``(from_index, to_index, rate)`` triples; several
    events leading to the same target are kept separately and summed when
    the generator is assembled.
    """

    topo: Topology
    params: Params
    states: list
    index: dict
    transitions: list

    def __len__(self):
        return len(self.states)

    @property
    def absorbing(self) -> np.ndarray:
        return np.array([s.x.sum() == 0 for s in self.states])

    def state_index(self, cfg: Configuration) -> int:
        return self.index[cfg.key()]


def enumerate_state_space(topo: Topology, cfg0: Configuration, params: Params,
                          cap: int = DEFAULT_STATE_CAP) -> StateSpace:
    """All configurations reachable from ``cfg0`` under single events."""
    validate_configuration(cfg0, topo)
    states = [cfg0.copy()]
    index = {cfg0.key(): 0}
    transitions = []
    queue = deque([0])
    while queue:
        i = queue.popleft()
        table = enabled_rates(states[i], topo, params)
        for ev, rate in table.entries:
            nxt, _ = apply_event(states[i], topo, ev)
            key = nxt.key()
            j = index.get(key)
            if j is None:
                if len(states) >= cap:
                    raise StateSpaceTooLarge(f"more than {cap} reachable states")
                j = len(states)
                index[key] = j
                states.append(nxt)
                queue.append(j)
            transitions.append((i, j, rate))
    return StateSpace(topo, params, states, index, transitions)


def generator_matrix(space: StateSpace) -> sparse.csr_matrix:
    """Sparse generator ``Q`` with ``Q[i, j] = rate(i -> j)`` and zero row sums."""
    n = len(space)
    if space.transitions:
        i, j, r = (np.array(a) for a in zip(*space.transitions))
    else:
        i = j = np.zeros(0, dtype=int)
        r = np.zeros(0)
    off = sparse.coo_matrix((r, (i, j)), shape=(n, n)).tocsr()
    off.setdiag(0.0)
    off.eliminate_zeros()
    diag = np.asarray(off.sum(axis=1)).ravel()
    return (off - sparse.diags(diag)).tocsr()


def mean_absorption_time(space: StateSpace, generator: sparse.spmatrix, cfg0: Configuration) -> float:
    """Expected time to reach the all-healthy state from ``cfg0``."""
    start = space.state_index(cfg0)
    absorbing = space.absorbing
    if absorbing[start]:
        return 0.0
    trans = np.flatnonzero(~absorbing)
    q_tt = sparse.csc_matrix(generator[trans][:, trans])
    try:
        lu = splinalg.splu(-q_tt)
        m = lu.solve(np.ones(trans.size))
    except RuntimeError as exc:
        raise ReachabilityError("absorbing set unreachable from some state") from exc
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        raise ReachabilityError("absorbing set unreachable from some state")
    pos = int(np.searchsorted(trans, start))
    return float(m[pos])


def exact_mean_extinction_time(topo: Topology, cfg0: Configuration, params: Params,
                               cap: int = DEFAULT_STATE_CAP) -> float:
    """Enumerate, assemble and solve in one call."""
    space = enumerate_state_space(topo, cfg0, params, cap)
    return mean_absorption_time(space, generator_matrix(space), cfg0)


# --------------------------------------------------------------------------
# leftmost-edge walk on Z


def edge_escape_probability(params: Params) -> float:
    """P(an infection across an active boundary edge beats recovery and blocking)."""
    return params.lam / (params.lam + 1.0 + params.alpha)


@njit(cache=True, nogil=True)
def _drift_kernel(x0, e0, src, dst, out_ptr, out_edges, in_ptr, in_edges, lam, alpha, boundary,
                  pinned, base, replicas, max_steps, counts):
    nv = x0.shape[0]
    ne = e0.shape[0]
    x = np.empty(nv, np.int8)
    e = np.empty(ne, np.int8)
    ilist = np.empty(nv, np.int64)
    ipos = np.empty(nv, np.int64)
    flist = np.empty(ne, np.int64)
    fpos = np.empty(ne, np.int64)
    state = np.empty(1, np.uint64)
    for r in range(replicas):
        x[:] = x0
        e[:] = e0
        state[0] = _rng.key_for(base, r)
        left = 0
        for v in range(nv):
            if x[v] == 1:
                left = v
                break
        steps = 0
        while steps < max_steps:
            st, _, _, real, kind, target = _run_kernel(x, e, src, dst, out_ptr, out_edges, in_ptr,
                                                       in_edges, lam, alpha, np.inf, boundary,
                                                       pinned, state, ilist, ipos, flist, fpos, 1)
            if st != STATUS_PAUSED:
                # a boundary hit is a left step; extinction is the leftmost's
                # final recovery, a right step that must not be dropped
                if st == 2:
                    counts[0] += 1
                elif st == 0 and kind == 1:
                    counts[1] += 1
                break
            if kind == 0 and target < left:
                counts[0] += 1
                steps += 1
                left = target
            elif kind == 1 and target == left:
                counts[1] += 1
                steps += 1
                nl = -1
                for v in range(left + 1, nv):
                    if x[v] == 1:
                        nl = v
                        break
                if nl < 0:
                    break
                left = nl


@dataclass(frozen=True)
class DriftEstimate:
    left_steps: int
    right_steps: int

    @property
    def steps(self) -> int:
        return self.left_steps + self.right_steps

    @property
    def frequency(self) -> float:
        return self.left_steps / self.steps if self.steps else 0.0

    @property
    def se(self) -> float:
        if not self.steps:
            return 0.0
        p = self.frequency
        return math.sqrt(max(p * (1 - p), 1.0 / self.steps) / self.steps)


def edge_drift_experiment(params: Params, replicas: int, master_seed: int = 0, window: int = 40,
                          steps_per_replica: int = 20) -> DriftEstimate:
    """Empirical frequency with which the leftmost infected site moves left.

    Each replica starts on the window ``{-W..W}`` with ``{0..W}`` infected and
    all edges active, and records up to ``steps_per_replica`` moves of the
    leftmost infected site, stopping early on extinction or when the left
    end of the window is reached.
    """
    if replicas < 1:
        raise ValidationError("replicas must be >= 1")
    topo = build_topology("path", window)
    x = (topo.labels >= 0).astype(np.int8)
    e = np.ones(topo.n_edges, np.int8)
    boundary = np.zeros(topo.n_vertices, np.bool_)
    boundary[0] = True
    counts = np.zeros(2, np.int64)
    _drift_kernel(x, e, topo.src.copy(), topo.dst.copy(), topo.out_ptr, topo.out_edges, topo.in_ptr,
                  topo.in_edges, params.lam, params.alpha, boundary, np.zeros(topo.n_vertices, np.bool_),
                  _rng.batch_base(master_seed), int(replicas), int(steps_per_replica), counts)
    return DriftEstimate(int(counts[0]), int(counts[1]))
