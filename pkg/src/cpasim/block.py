"""Four-vertex block states and oriented site percolation.

Block notation follows the pair states between neighbours ``i`` and ``i+1``:

``<=>``  both directed edges active
``<|``   ``e(i, i+1) = 0``: vertex ``i+1`` avoids the infected vertex ``i``
``|>``   ``e(i+1, i) = 0``: vertex ``i`` avoids the infected vertex ``i+1``

A block is good when, started from any two-infected pattern (class A2), it
is fully infected with all six edges active (class A4) after time ``tau``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (STATUS_ALIVE, Configuration, Params, ValidationError, build_topology, custom_topology,
                   simulate_batch, validate_configuration)
from .rng import stream_key

BLOCK_TOPOLOGY = build_topology("line", 4)
_E = BLOCK_TOPOLOGY.edge_index

OPEN, RIGHT_BLOCKED, LEFT_BLOCKED = "<=>", "<|", "|>"


class BlockClass(enum.Enum):
    A2L = "A2L"
    A2R = "A2R"
    A2O = "A2O"
    A3L = "A3L"
    A3R = "A3R"
    A3O = "A3O"
    A4 = "A4"
    OTHER = "other"


@dataclass(frozen=True)
class BlockLabel:
    cls: BlockClass
    reflected: bool = False

    def __str__(self):
        return self.cls.value + ("*" if self.reflected else "")


def pair_state(cfg: Configuration, i: int) -> str:
    """State of the bond between vertices ``i`` and ``i+1`` of a block."""
    fwd = cfg.e[_E[(i, i + 1)]]
    back = cfg.e[_E[(i + 1, i)]]
    if fwd and back:
        return OPEN
    if not fwd and back:
        return RIGHT_BLOCKED
    if fwd and not back:
        return LEFT_BLOCKED
    raise ValidationError("both directions of a bond are blocked")


def block_configuration(x, pairs) -> Configuration:
    """Build a block configuration from 4 vertex bits and 3 pair states."""
    e = np.ones(BLOCK_TOPOLOGY.n_edges, np.int8)
    for i, s in enumerate(pairs):
        if s == RIGHT_BLOCKED:
            e[_E[(i, i + 1)]] = 0
        elif s == LEFT_BLOCKED:
            e[_E[(i + 1, i)]] = 0
        elif s != OPEN:
            raise ValidationError(f"unknown pair state {s!r}")
    cfg = Configuration(np.asarray(x, np.int8), e)
    validate_configuration(cfg, BLOCK_TOPOLOGY)
    return cfg


def reflect(cfg: Configuration) -> Configuration:
    """Mirror a block across its middle bond (vertex ``i`` becomes ``3 - i``)."""
    x = cfg.x[::-1].copy()
    e = np.empty_like(cfg.e)
    for (i, j), k in _E.items():
        e[_E[(3 - i, 3 - j)]] = cfg.e[k]
    return Configuration(x, e)


def _match_unreflected(x, p) -> BlockClass:
    if not (x[0] and x[1] and p[0] == OPEN):
        return BlockClass.OTHER
    if x[2] and p[1] == OPEN:
        if x[3] and p[2] == OPEN:
            return BlockClass.A4
        if p[2] == RIGHT_BLOCKED:
            return BlockClass.A3L
        if p[2] == LEFT_BLOCKED and x[3]:
            return BlockClass.A3R
        if p[2] == OPEN:
            return BlockClass.A3O
    if p[1] == RIGHT_BLOCKED:
        return BlockClass.A2L
    if p[1] == LEFT_BLOCKED and x[2]:
        return BlockClass.A2R
    if p[1] == OPEN:
        return BlockClass.A2O
    return BlockClass.OTHER


_RANK = {BlockClass.A4: 3, BlockClass.A3L: 2, BlockClass.A3R: 2, BlockClass.A3O: 2,
         BlockClass.A2L: 1, BlockClass.A2R: 1, BlockClass.A2O: 1, BlockClass.OTHER: 0}


_TIER_ORDER = {BlockClass.A3L: 0, BlockClass.A3R: 1, BlockClass.A3O: 2,
               BlockClass.A2L: 0, BlockClass.A2R: 1, BlockClass.A2O: 2}


def classify_block(cfg: Configuration) -> BlockLabel:
    """Highest class (A4 over A3 over A2) matched directly or after reflection.

    When both orientations match in the same tier, the class is chosen in the
    order L, R, O so that the result does not depend on orientation; the flag
    tells whether the chosen match is the mirrored one.
    """
    validate_configuration(cfg, BLOCK_TOPOLOGY)
    direct = _match_unreflected(cfg.x, [pair_state(cfg, i) for i in range(3)])
    r = reflect(cfg)
    mirrored = _match_unreflected(r.x, [pair_state(r, i) for i in range(3)])
    if direct is BlockClass.A4 or mirrored is BlockClass.A4:
        return BlockLabel(BlockClass.A4, False)
    if _RANK[direct] == 0 and _RANK[mirrored] == 0:
        return BlockLabel(BlockClass.OTHER, False)
    best = max((direct, False), (mirrored, True),
               key=lambda c: (_RANK[c[0]], -_TIER_ORDER.get(c[0], 0), not c[1]))
    return BlockLabel(*best)


def all_block_configurations():
    """Every valid 4-vertex configuration (vertex bits times pair states)."""
    for x in itertools.product((0, 1), repeat=4):
        for pairs in itertools.product((OPEN, RIGHT_BLOCKED, LEFT_BLOCKED), repeat=3):
            try:
                yield block_configuration(x, pairs)
            except ValidationError:
                continue


def canonical_start(cls: BlockClass | str) -> Configuration:
    """Representative A2 start with the unspecified sites healthy where allowed."""
    cls = BlockClass(cls) if isinstance(cls, str) else cls
    if cls is BlockClass.A2L:
        return block_configuration((1, 1, 0, 0), (OPEN, RIGHT_BLOCKED, OPEN))
    if cls is BlockClass.A2R:
        return block_configuration((1, 1, 1, 0), (OPEN, LEFT_BLOCKED, OPEN))
    if cls is BlockClass.A2O:
        return block_configuration((1, 1, 0, 0), (OPEN, OPEN, OPEN))
    raise ValidationError("start class must be one of A2L, A2R, A2O")


def a2_completions(cls: BlockClass | str) -> list[Configuration]:
    """All valid configurations whose unreflected pattern is exactly ``cls``."""
    cls = BlockClass(cls) if isinstance(cls, str) else cls
    out = []
    for cfg in all_block_configurations():
        if _match_unreflected(cfg.x, [pair_state(cfg, i) for i in range(3)]) is cls:
            out.append(cfg)
    return out


def default_tau(params: Params, p: float = 0.1) -> float:
    """Block duration from the staged recipe with failure budget ``p``.

    Two stages (A2 to A3, A3 to A4) each wait for one rate-1 recovery that
    unblocks an edge, allotted ``log(6 / p)``, plus up to three rate-``lam``
    infection steps; a final stretch ``-log(1 - p/3) / 4`` keeps all four
    vertices from recovering at the end.
    """
    if not 0 < p < 1:
        raise ValidationError("p must lie in (0, 1)")
    if params.lam <= 0:
        raise ValidationError("the recipe needs lam > 0")
    stage = math.log(6.0 / p) * (1.0 + 3.0 / params.lam)
    return 2.0 * stage - math.log1p(-p / 3.0) / 4.0


def _hostile_topology():
    # block vertices 0..3 plus always-infected outside neighbours 4 (left) and 5 (right)
    edges = [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (4, 0), (5, 3)]
    return custom_topology(6, edges, kind="block-hostile")


HOSTILE_TOPOLOGY = _hostile_topology()


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    replicas: int

    def __str__(self):
        return f"{self.value:.4f} +/- {self.se:.4f} (n={self.replicas})"


def _estimate(hits: int, n: int) -> Estimate:
    p = hits / n
    return Estimate(p, math.sqrt(p * (1 - p) / n), n)


def is_a4(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Vectorised A4 test on rows of final block states (first 4 vertices, first 6 edges)."""
    return (x[:, :4].min(axis=1) == 1) & (e[:, :6].min(axis=1) == 1)


def block_good_probability(params: Params, tau: float, start: BlockClass | str | Configuration,
                           replicas: int, boundary_mode: str = "closed", master_seed: int = 0,
                           threads: int = 1) -> Estimate:
    """Monte Carlo frequency of being in A4 at time ``tau``.

    ``closed`` runs the isolated block.  ``hostile`` adds an always-infected
    outside neighbour on each side with a single edge into vertex 0 or 3;
    that edge is subject to blocking like any other and is reactivated when
    the neighbour's rate-1 clock rings, so the outside infection pressure is
    persistent but gated by the same edge rules.
    """
    if not tau > 0:
        raise ValidationError("tau must be positive")
    cfg = start if isinstance(start, Configuration) else canonical_start(start)
    if boundary_mode == "closed":
        res = simulate_batch(cfg, BLOCK_TOPOLOGY, params, replicas, master_seed, t_max=tau,
                             threads=threads, keep_final=True)
    elif boundary_mode == "hostile":
        x = np.concatenate([cfg.x, [1, 1]]).astype(np.int8)
        e = np.concatenate([cfg.e, [1, 1]]).astype(np.int8)
        res = simulate_batch(Configuration(x, e), HOSTILE_TOPOLOGY, params, replicas, master_seed,
                             t_max=tau, pinned=(4, 5), threads=threads, keep_final=True)
    else:
        raise ValidationError("boundary_mode must be 'closed' or 'hostile'")
    good = (res.status == STATUS_ALIVE) & is_a4(res.final_x, res.final_e)
    return _estimate(int(good.sum()), replicas)


# --------------------------------------------------------------------------
# oriented site percolation


def _generator(master_seed: int, replica_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(master_seed, replica_index)))


@dataclass
class OPResult:
    """One oriented-percolation run.

    ``survival_height`` is the last level with a wet site (``height`` if the
    run survives).  ``right_edge[t]`` is the rightmost wet ``x`` at level ``t``
    (``nan`` once dead), and ``counts[t]`` the number of wet sites inside the
    initial row's span at level ``t``.
    """

    survival_height: int
    survived: bool
    right_edge: np.ndarray
    counts: np.ndarray


def op_run(p: float, initial_row: np.ndarray, height: int, master_seed: int = 0,
           replica_index: int = 0, uniforms: Optional[np.ndarray] = None) -> OPResult:
    """Oriented site percolation on ``{(x, t): x = t mod 2}``.

    Site ``(x, t+1)`` is wet when it is open (probability ``p``, independently)
    and ``(x-1, t)`` or ``(x+1, t)`` is wet.  ``initial_row[i]`` marks site
    ``x = 2 i`` of level 0 as wet (level-0 sites are wet by fiat).  The
    lattice extends ``height`` sites beyond the initial span on each side, so
    no boundary is ever felt.  ``uniforms`` of shape ``(height, X)`` may be
    supplied to couple runs at different ``p``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError("p must lie in [0, 1]")
    init = np.asarray(initial_row, dtype=bool)
    if init.ndim != 1 or init.size < 1 or height < 1:
        raise ValidationError("need a non-empty initial row and height >= 1")
    span = 2 * (init.size - 1)
    # column c holds x = c - height
    ncol = span + 2 * height + 1
    wet = np.zeros(ncol, dtype=bool)
    wet[height:height + span + 1:2] = init
    lo, hi = height, height + span
    if uniforms is None:
        uniforms = _generator(master_seed, replica_index).random((height, ncol))
    elif uniforms.shape != (height, ncol):
        raise ValidationError(f"uniforms must have shape {(height, ncol)}")
    right = np.full(height + 1, np.nan)
    counts = np.zeros(height + 1, dtype=np.int64)
    cols = np.flatnonzero(wet)
    if cols.size == 0:
        return OPResult(0, False, right, counts)
    right[0] = cols[-1] - height
    counts[0] = int(wet[lo:hi + 1].sum())
    nxt = np.empty_like(wet)
    for t in range(height):
        nxt[:] = False
        nxt[1:] |= wet[:-1]
        nxt[:-1] |= wet[1:]
        nxt &= uniforms[t] < p
        wet, nxt = nxt, wet
        cols = np.flatnonzero(wet)
        if cols.size == 0:
            return OPResult(t, False, right, counts)
        right[t + 1] = cols[-1] - height
        counts[t + 1] = int(wet[lo:hi + 1].sum())
    return OPResult(height, True, right, counts)


def op_survival_frequency(p: float, width: int, height: int, replicas: int,
                          master_seed: int = 0) -> Estimate:
    """Fraction of runs from ``width`` wet sites that reach ``height``."""
    init = np.ones(width, dtype=bool)
    hits = sum(op_run(p, init, height, master_seed, r).survived for r in range(replicas))
    return _estimate(int(hits), replicas)


@dataclass
class EdgeSpeed:
    speed: float
    low: float
    high: float
    survivors: int


def op_edge_speed(p: float, height: int, replicas: int, master_seed: int = 0,
                  confidence: float = 0.99) -> EdgeSpeed:
    """Median of ``r_n / n`` over runs from a single wet site that survive to level ``n``.

    Runs with the same seed share their uniforms across ``p``, so speeds at
    different ``p`` are coupled monotonically.  The interval is the
    distribution-free order-statistic interval for the median.
    """
    if height < 1:
        raise ValidationError("height must be >= 1")
    speeds = []
    for r in range(replicas):
        res = op_run(p, np.ones(1, dtype=bool), height, master_seed, r)
        if res.survived:
            speeds.append(res.right_edge[-1] / height)
    if not speeds:
        raise RuntimeError("no replica survived; edge speed undefined")
    s = np.sort(np.array(speeds))
    n = s.size
    from scipy.stats import binom
    k = int(binom.ppf((1 - confidence) / 2, n, 0.5))
    lo = s[max(k - 1, 0)]
    hi = s[min(n - k, n - 1)]
    return EdgeSpeed(float(np.median(s)), float(lo), float(hi), n)


def bond_site_coupled(p_bond: float, width: int, height: int, master_seed: int = 0,
                      replica_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Wet sets of bond and site percolation built from the same bond variables.

    A site is open exactly when at least one of its two incoming bonds is
    open, so the site process has ``p_s = p_b (2 - p_b)``.  Returns boolean
    arrays ``(bond_wet, site_wet)`` of shape ``(height + 1, X)``.
    """
    gen = _generator(master_seed, replica_index)
    span = 2 * (width - 1)
    ncol = span + 2 * height + 1
    left_open = gen.random((height, ncol)) < p_bond
    right_open = gen.random((height, ncol)) < p_bond
    bond = np.zeros((height + 1, ncol), dtype=bool)
    site = np.zeros_like(bond)
    bond[0, height:height + span + 1:2] = True
    site[0] = bond[0]
    for t in range(height):
        from_left = np.zeros(ncol, dtype=bool)
        from_right = np.zeros(ncol, dtype=bool)
        from_left[1:] = bond[t, :-1]
        from_right[:-1] = bond[t, 1:]
        bond[t + 1] = (left_open[t] & from_left) | (right_open[t] & from_right)
        s_left = np.zeros(ncol, dtype=bool)
        s_right = np.zeros(ncol, dtype=bool)
        s_left[1:] = site[t, :-1]
        s_right[:-1] = site[t, 1:]
        site[t + 1] = (left_open[t] | right_open[t]) & (s_left | s_right)
    return bond, site
