"""Experiment drivers behind the command-line interface.

Each driver returns plain result objects; :mod:`cpasim.cli` turns them into
CSV files and console tables.  All randomness flows from a master seed, so
every result is reproducible and independent of the thread count.
"""

from __future__ import annotations

import hashlib
import io
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from . import block as _block
from . import oracle as _oracle
from . import star as _star
from .core import (STATUS_ALIVE, STATUS_EXTINCT, Outcome, Params, ValidationError, build_topology,
                   initial_configuration, simulate_batch)

RUN_COLUMNS = ("master_seed", "replica_index", "topology", "n", "lambda", "alpha", "t_max", "outcome",
               "extinction_time", "event_count", "wall_ms")

HEATMAP_LAMBDAS = tuple(np.round(np.arange(0.0, 5.01, 0.25), 10))
HEATMAP_ALPHAS = (0.0, 0.5, 1.0, 1.5, 2.0)
LARGE_ALPHA = 100.0
LARGE_ALPHA_N = 100


def fmt(x) -> str:
    """Render a CSV cell; floats get 17 significant digits, ``None`` is empty."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def config_hash(config: dict) -> str:
    """Stable digest of a resolved configuration (sorted ``key=value`` lines)."""
    text = "\n".join(f"{k}={fmt(v) if not isinstance(v, (list, tuple)) else ','.join(fmt(a) for a in v)}"
                     for k, v in sorted(config.items()))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def render_csv(columns: Sequence[str], rows: Iterable[Sequence], config: Optional[dict] = None,
               notes: Sequence[str] = ()) -> str:
    """CSV text with optional ``# config-hash=`` and ``# note`` comment lines."""
    buf = io.StringIO()
    if config is not None:
        buf.write(f"# config-hash={config_hash(config)}\n")
    for note in notes:
        buf.write(f"# {note}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


@dataclass
class RunRecord:
    master_seed: int
    replica_index: int
    topology: str
    n: int
    lam: float
    alpha: float
    t_max: float
    outcome: Outcome
    extinction_time: Optional[float]
    event_count: int
    wall_ms: Optional[float] = None

    def row(self) -> tuple:
        return (self.master_seed, self.replica_index, self.topology, self.n, self.lam, self.alpha,
                self.t_max, self.outcome.value, self.extinction_time, self.event_count, self.wall_ms)


_OUT = {STATUS_EXTINCT: Outcome.EXTINCT, STATUS_ALIVE: Outcome.ALIVE_AT_CUTOFF, 2: Outcome.BOUNDARY_HIT}


def _records(status, times, events, topology, n, params, t_max, seed, wall_ms=None) -> list[RunRecord]:
    out = []
    for i in range(len(status)):
        oc = _OUT[int(status[i])]
        out.append(RunRecord(seed, i, topology, n, params.lam, params.alpha, t_max, oc,
                             float(times[i]) if oc is Outcome.EXTINCT else None, int(events[i]),
                             wall_ms))
    return out


def run_replicas(topology: str, n: int, params: Params, replicas: int, t_max: float, seed: int,
                 threads: int = 1, timing: bool = False):
    """All-infected, all-active start on ``build_topology(topology, n)``."""
    topo = build_topology(topology, n)
    cfg = initial_configuration(topo)
    t0 = time.perf_counter()
    res = simulate_batch(cfg, topo, params, replicas, seed, t_max=t_max, threads=threads)
    wall = (time.perf_counter() - t0) * 1e3 / max(replicas, 1) if timing else None
    return res, _records(res.status, res.time, res.events, topology, n, params, t_max, seed, wall)


# --------------------------------------------------------------------------
# heatmap


@dataclass
class HeatCell:
    lam: float
    alpha: float
    n: int
    t_max: float
    survival: float
    replicas: int


@dataclass
class HeatmapResult:
    cells: list
    records: list
    notes: list = field(default_factory=list)

    def column(self, alpha: float) -> list:
        return sorted((c for c in self.cells if c.alpha == alpha), key=lambda c: c.lam)

    def critical_lambda(self, alpha: float) -> Optional[float]:
        """Smallest grid ``lam`` whose survival fraction is at least 1/2."""
        for c in self.column(alpha):
            if c.survival >= 0.5:
                return c.lam
        return None


def heatmap(n: int, lams: Sequence[float], alphas: Sequence[float], replicas: int,
            t_max: Optional[float] = None, seed: int = 0, threads: int = 1,
            large_alpha_n: int = LARGE_ALPHA_N, timing: bool = False) -> HeatmapResult:
    """Survival fraction at ``t_max`` (default ``20 n``) on the cycle for each ``(lam, alpha)``.

    Cells with ``alpha >= 100`` run on a cycle of ``large_alpha_n`` vertices
    (and the matching default ``t_max``); a note says so in the output.
    """
    if not lams or not alphas:
        raise ValidationError("lambda and alpha grids must be nonempty")
    if replicas < 1:
        raise ValidationError("replicas must be >= 1")
    cells, records, notes = [], [], []
    for a in alphas:
        cell_n = large_alpha_n if a >= LARGE_ALPHA else n
        if cell_n != n:
            notes.append(f"alpha={fmt(a)} cells use reduced n={cell_n}")
        cell_t = float(t_max) if t_max is not None else 20.0 * cell_n
        for lam in lams:
            p = Params(lam, a)
            res, recs = run_replicas("cycle", cell_n, p, replicas, cell_t, seed, threads, timing)
            surv = float(np.mean(res.status == STATUS_ALIVE))
            cells.append(HeatCell(float(lam), float(a), cell_n, cell_t, surv, replicas))
            records.extend(recs)
    return HeatmapResult(cells, records, notes)


# --------------------------------------------------------------------------
# regression helpers


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float
    slope_ci: tuple

    def __str__(self):
        lo, hi = self.slope_ci
        return f"slope={self.slope:.4f} [{lo:.4f}, {hi:.4f}] R2={self.r2:.4f}"


def linear_fit(x, y, confidence: float = 0.95) -> LinearFit:
    """Ordinary least squares with a t-based slope interval."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 2:
        raise ValidationError("need at least two points to fit")
    res = stats.linregress(x, y)
    df = x.size - 2
    if df > 0:
        q = stats.t.ppf(0.5 + confidence / 2, df)
        ci = (res.slope - q * res.stderr, res.slope + q * res.stderr)
    else:
        ci = (res.slope, res.slope)
    r2 = res.rvalue ** 2 if np.isfinite(res.rvalue) else 0.0
    return LinearFit(float(res.slope), float(res.intercept), float(r2), float(res.stderr), ci)


def median_of(times: np.ndarray) -> float:
    return float(np.median(times))


# --------------------------------------------------------------------------
# Z_n scaling


@dataclass
class ScalingRow:
    n: int
    replicas: int
    censored: int
    median: float
    p90: float


@dataclass
class ZnScalingResult:
    params: Params
    t_max: float
    rows: list
    records: list
    log_fit: Optional[LinearFit]
    exp_fit: Optional[LinearFit]

    @property
    def model(self) -> str:
        """``log`` when the ``tau ~ log n`` fit explains more variance, else ``exp``."""
        if self.log_fit is None or self.exp_fit is None:
            return "censored"
        return "log" if self.log_fit.r2 >= self.exp_fit.r2 else "exp"


def _censored_quantile(times: np.ndarray, alive: np.ndarray, q: float) -> float:
    # censored runs sort last; the quantile is inf once it falls among them
    t = np.sort(np.where(alive, np.inf, times))
    if q == 0.5:
        return _median_from_sorted(t, t.size)
    return float(np.quantile(t, q, method="lower"))


def zn_scaling(params: Params, ns: Sequence[int], replicas: int, t_max: float, seed: int = 0,
               threads: int = 1, timing: bool = False) -> ZnScalingResult:
    """Median and 90th percentile of the extinction time on the ``n``-cycle from all infected."""
    if not ns:
        raise ValidationError("n list must be nonempty")
    rows, records = [], []
    for n in ns:
        res, recs = run_replicas("cycle", n, params, replicas, t_max, seed, threads, timing)
        alive = res.status == STATUS_ALIVE
        rows.append(ScalingRow(int(n), replicas, int(alive.sum()),
                               _censored_quantile(res.time, alive, 0.5),
                               _censored_quantile(res.time, alive, 0.9)))
        records.extend(recs)
    ok = [r for r in rows if np.isfinite(r.median)]
    log_fit = exp_fit = None
    if len(ok) >= 2:
        ln = np.array([r.n for r in ok], float)
        med = np.array([r.median for r in ok])
        log_fit = linear_fit(np.log(ln), med)
        exp_fit = linear_fit(ln, np.log(med))
    return ZnScalingResult(params, t_max, rows, records, log_fit, exp_fit)


# --------------------------------------------------------------------------
# star exponent


@dataclass
class StarRow:
    n: int
    replicas: int
    median: float
    deaths: int
    work: int


@dataclass
class StarDeltaResult:
    params: Params
    engine: str
    rows: list
    fit: Optional[LinearFit]
    delta: float
    exponential_regime: bool = False
    records: list = field(default_factory=list)

    @property
    def delta_hat(self) -> float:
        return self.fit.slope if self.fit else math.nan

    def relative_error(self) -> float:
        return abs(self.delta_hat - self.delta) / self.delta


def _median_from_sorted(tt: np.ndarray, replicas: int) -> float:
    k = replicas // 2
    if replicas % 2:
        return float(tt[k])
    return 0.5 * float(tt[k - 1] + tt[k])


def star_median_kl(n_vertices: int, params: Params, replicas: int, seed: int = 0,
                   start: float = 1.0) -> StarRow:
    """Median extinction time of the star from the (K, L) chain, stopped once the median is known.

    Replicas advance together through a growing time horizon ``H``; as soon
    as more than half of them have died by ``H`` the sample median is fixed,
    and the still-running replicas are never needed.
    """
    ens = _star.KLEnsemble(n_vertices - 1, params, replicas, seed)
    need = replicas // 2 + 1
    h = float(start)
    while True:
        ens.advance(h)
        dead = ~ens.alive
        c = int(np.sum(ens.times[dead] <= h))
        if c >= need:
            break
        h *= 1.25 if c < 0.7 * need else 1.03
    tt = np.sort(ens.times[dead])
    return StarRow(n_vertices, replicas, _median_from_sorted(tt, replicas), int(dead.sum()),
                   int(ens.phases.sum()))


def star_median_events(n_vertices: int, params: Params, replicas: int, seed: int = 0,
                       engine: str = "reduced", threads: int = 1) -> StarRow:
    """Median extinction time from event-level engines run to extinction."""
    if engine == "reduced":
        res = _star.reduced_star_batch(n_vertices, params, replicas, seed)
        times, work = res.time, int(res.events.sum())
    elif engine == "full":
        topo = build_topology("star", n_vertices)
        res = simulate_batch(initial_configuration(topo), topo, params, replicas, seed,
                             threads=threads)
        times, work = res.time, int(res.events.sum())
    else:
        raise ValidationError(f"unknown star engine {engine!r}")
    return StarRow(n_vertices, replicas, median_of(times), replicas, work)


def star_delta(params: Params, ns: Sequence[int], replicas: int, seed: int = 0, engine: str = "kl",
               threads: int = 1, confidence: float = 0.95) -> StarDeltaResult:
    """Slope of log median extinction time against log ``n`` on stars of ``n`` vertices."""
    if params.alpha == 0:
        return StarDeltaResult(params, engine, [], None, math.inf, exponential_regime=True)
    if params.lam <= 0:
        raise ValidationError("star-delta needs lambda > 0")
    delta = _star.delta_exponent(params)
    rows = []
    for n in ns:
        if engine == "kl":
            rows.append(star_median_kl(int(n), params, replicas, seed))
        else:
            rows.append(star_median_events(int(n), params, replicas, seed, engine, threads))
    fit = None
    if len(rows) >= 2:
        fit = linear_fit(np.log([r.n for r in rows]), np.log([r.median for r in rows]), confidence)
    return StarDeltaResult(params, engine, rows, fit, delta)


# --------------------------------------------------------------------------
# Z-chain death probability


@dataclass
class DeathProbRow:
    n: int
    samples: int
    hits: int
    estimate: float
    se: float
    exact: float


def zchain_death_scaling(params: Params, ns: Sequence[int], samples: Sequence[int] | int,
                         seed: int = 0) -> tuple[list, LinearFit, float]:
    """Empirical ``P(Z_1 = 0 | Z_0 = n)`` and its log-log slope, with ``-1/gamma_1`` for reference."""
    if isinstance(samples, int):
        samples = [samples] * len(ns)
    rows = []
    for n, s in zip(ns, samples):
        p, se, hits = _star.zchain_death_probability(int(n), params, int(s), seed)
        rows.append(DeathProbRow(int(n), int(s), hits, p, se,
                                 _star.zchain_death_probability_exact(int(n), params)))
    if any(r.hits == 0 for r in rows):
        raise RuntimeError("a death probability estimate has no hits; increase samples")
    fit = linear_fit(np.log([r.n for r in rows]), np.log([r.estimate for r in rows]))
    return rows, fit, -_star.delta_exponent(params)


# --------------------------------------------------------------------------
# oracle agreement


ORACLE_GRID = (0.0, 0.5, 1.0, 2.0)
ORACLE_GRAPHS = (("path", 1), ("path", 2), ("path", 3))


def oracle_graph(kind: str, n_vertices: int):
    """Tiny graph by vertex count; ``path`` with 1 vertex is a single isolated vertex."""
    from .core import custom_topology
    if n_vertices < 1 or n_vertices > 4:
        raise ValidationError("oracle-check graphs have 1 to 4 vertices")
    if kind == "path":
        edges = [(i, i + 1) for i in range(n_vertices - 1)]
        edges += [(j, i) for i, j in edges]
        return custom_topology(n_vertices, edges, kind=f"path{n_vertices}")
    if kind == "cycle":
        return build_topology("cycle", n_vertices)
    if kind == "star":
        return build_topology("star", n_vertices)
    raise ValidationError(f"unknown oracle graph kind {kind!r}")


@dataclass
class OracleRow:
    graph: str
    lam: float
    alpha: float
    exact: float
    mc_mean: float
    se: float
    z: float
    passed: bool


def oracle_check(graphs: Sequence[tuple] = ORACLE_GRAPHS, lams: Sequence[float] = ORACLE_GRID,
                 alphas: Sequence[float] = ORACLE_GRID, replicas: int = 100_000, seed: int = 0,
                 threads: int = 1, tolerance_se: float = 3.0) -> list:
    """Compare Monte Carlo mean extinction times with the exact linear solve.

    Every run starts with vertex 0 infected and all edges active.
    """
    rows = []
    for kind, nv in graphs:
        topo = oracle_graph(kind, nv)
        cfg = initial_configuration(topo, [0])
        for lam in lams:
            for a in alphas:
                p = Params(lam, a)
                exact = _oracle.exact_mean_extinction_time(topo, cfg, p)
                res = simulate_batch(cfg, topo, p, replicas, seed, threads=threads)
                mean = float(res.time.mean())
                se = float(res.time.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else math.inf
                z = abs(mean - exact) / se if se > 0 else (0.0 if mean == exact else math.inf)
                rows.append(OracleRow(topo.kind, float(lam), float(a), exact, mean, se, z,
                                      z <= tolerance_se))
    return rows


# --------------------------------------------------------------------------
# blocks and percolation


@dataclass
class BlockRow:
    start: str
    mode: str
    estimate: float
    se: float
    replicas: int


def block_table(params: Params, tau: Optional[float], replicas: int, modes: Sequence[str] = ("closed", "hostile"),
                seed: int = 0, threads: int = 1) -> tuple[float, list]:
    """Good-block probability for each A2 start class and boundary mode."""
    if tau is None:
        tau = _block.default_tau(params)
    rows = []
    for mode in modes:
        for cls in ("A2L", "A2R", "A2O"):
            est = _block.block_good_probability(params, tau, cls, replicas, mode, seed, threads)
            rows.append(BlockRow(cls, mode, est.value, est.se, est.replicas))
    return tau, rows


@dataclass
class PercolationRow:
    p: float
    width: int
    height: int
    survival: float
    survival_se: float
    speed: float
    speed_low: float
    speed_high: float
    speed_survivors: int


def percolation_table(ps: Sequence[float], width: int, height: int, replicas: int,
                      seed: int = 0) -> list:
    """Survival from a ``width``-site row and right-edge speed from a single site, per ``p``."""
    rows = []
    for p in ps:
        s = _block.op_survival_frequency(p, width, height, replicas, seed)
        try:
            sp = _block.op_edge_speed(p, height, replicas, seed)
            speed = (sp.speed, sp.low, sp.high, sp.survivors)
        except RuntimeError:
            speed = (math.nan, math.nan, math.nan, 0)
        rows.append(PercolationRow(float(p), width, height, s.value, s.se, *speed))
    return rows
