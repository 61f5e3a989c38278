"""Star graph: leaf-state reduction, spectral closed forms and embedded chains.

On the star the process can be tracked through the centre bit and the
number of leaves in each of four states:

``1A``  infected leaf, both edges active
``0A``  healthy leaf, both edges active
``0D``  healthy leaf that blocked the centre (only while the centre is infected)
``1D``  infected leaf the centre blocked while the centre was healthy

A *one-phase* is a stretch with the centre infected, a *zero-phase* one with
the centre healthy.  During a one-phase each leaf evolves independently on
``{1A, 0A, 0D}`` with generator rates ``0A->1A: lam``, ``1A->0A: 1``,
``0A->0D: alpha``; the two decay rates of that chain are ``gamma1 <= gamma2``.

Leaf counts passed to the chains below are numbers of leaves, so a star on
``n`` vertices has ``n - 1`` leaves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate

from . import rng as _rng
from .core import Outcome, Params, SurvivalRecord, ValidationError

T_CUT = 28.0  # exp(-28) < 1e-12 bounds the neglected tail of every f integrand


class DegenerateSpectrumError(ValueError):
    """Raised when gamma1 == gamma2 (only at lam = 0, alpha = 1)."""


@dataclass(frozen=True)
class SpectralPair:
    gamma1: float
    gamma2: float

    @property
    def gap(self) -> float:
        return self.gamma2 - self.gamma1


def _disc(lam: float, alpha: float) -> float:
    # (lam + alpha + 1)**2 - 4 alpha, written without cancellation
    return lam * lam + 2.0 * lam * (alpha + 1.0) + (alpha - 1.0) ** 2


def gamma_pair(params: Params) -> SpectralPair:
    """Decay rates of the one-phase leaf chain.

    ``gamma1 + gamma2 = lam + alpha + 1`` and ``gamma1 * gamma2 = alpha``.
    The smaller root is evaluated as ``2 alpha / (s + sqrt(disc))`` to avoid
    cancellation when ``alpha`` is small.
    """
    lam, alpha = params.lam, params.alpha
    d = _disc(lam, alpha)
    if d == 0.0:
        raise DegenerateSpectrumError("repeated root: gamma1 == gamma2 (lam = 0, alpha = 1)")
    s = lam + alpha + 1.0
    big = s + math.sqrt(d)
    return SpectralPair(2.0 * alpha / big, 0.5 * big)


def delta_exponent(params: Params) -> float:
    """Survival-time exponent ``1 / gamma1``; ``math.inf`` when ``alpha = 0``."""
    g1 = gamma_pair(params).gamma1
    return math.inf if g1 == 0.0 else 1.0 / g1


def lambda_hat(params: Params) -> float:
    """Probability that the next zero-phase event is the centre's reinfection."""
    return params.lam / (1.0 + params.alpha + params.lam)


def u_prob(params: Params, t):
    """P(leaf is 1A at time t of a one-phase | 1A at its start)."""
    sp = gamma_pair(params)
    t = np.asarray(t, dtype=float)
    e1 = np.exp(-sp.gamma1 * t)
    # written as e1 plus a correction so that rounding cannot push u above 1
    val = np.minimum(e1 + (1.0 - sp.gamma1) * (np.exp(-sp.gamma2 * t) - e1) / sp.gap, 1.0)
    return float(val) if val.ndim == 0 else val


def v_prob(params: Params, t):
    """P(leaf is 1A at time t of a one-phase | 0A at its start)."""
    sp = gamma_pair(params)
    t = np.asarray(t, dtype=float)
    val = params.lam * (np.exp(-sp.gamma1 * t) - np.exp(-sp.gamma2 * t)) / sp.gap
    return float(val) if val.ndim == 0 else val


def v_peak_time(params: Params) -> float:
    """Maximiser of ``v``: ``(log gamma2 - log gamma1) / (gamma2 - gamma1)``."""
    sp = gamma_pair(params)
    if sp.gamma1 == 0.0:
        return math.inf
    return (math.log(sp.gamma2) - math.log(sp.gamma1)) / sp.gap


def leaf_generator(params: Params) -> np.ndarray:
    """Generator of one leaf during a one-phase on states (1A, 0A, 0D)."""
    lam, a = params.lam, params.alpha
    return np.array([[-1.0, 1.0, 0.0],
                     [lam, -(lam + a), a],
                     [0.0, 0.0, 0.0]])


def f_eta(params: Params, eta: float) -> float:
    """``int_0^inf (eta u + (1 - eta) v) e^{-t} dt - eta`` by adaptive quadrature."""
    if not 0.0 <= eta <= 1.0:
        raise ValidationError("eta must lie in [0, 1]")

    def integrand(t):
        return (eta * u_prob(params, t) + (1.0 - eta) * v_prob(params, t)) * math.exp(-t)

    val, _ = integrate.quad(integrand, 0.0, T_CUT, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val - eta


def f_eta_closed_form(params: Params, eta: float) -> float:
    """Laplace-transform evaluation of :func:`f_eta` (used as a cross-check)."""
    sp = gamma_pair(params)
    den = (1.0 + sp.gamma1) * (1.0 + sp.gamma2)
    return (eta * (sp.gamma1 + sp.gamma2) + (1.0 - eta) * params.lam) / den - eta


def critical_eta(params: Params, tol: float = 1e-10) -> float:
    """Root of the decreasing function :func:`f_eta` on [0, 1] by bisection."""
    lo, hi = 0.0, 1.0
    if f_eta(params, lo) <= 0.0:
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f_eta(params, mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class EtaRootReport:
    measured: float
    candidate_plus_one: float
    candidate_plus_two: float

    @property
    def matches(self) -> str:
        d1 = abs(self.measured - self.candidate_plus_one)
        d2 = abs(self.measured - self.candidate_plus_two)
        return "lam/(lam+alpha+1)" if d1 <= d2 else "lam/(lam+alpha+2)"

    def summary(self) -> str:
        return (f"root of f: {self.measured:.12f}; lam/(lam+alpha+1) = {self.candidate_plus_one:.12f} "
                f"(diff {abs(self.measured - self.candidate_plus_one):.2e}); lam/(lam+alpha+2) = "
                f"{self.candidate_plus_two:.12f} (diff {abs(self.measured - self.candidate_plus_two):.2e}); "
                f"measured root matches {self.matches}")


def eta_root_report(params: Params) -> EtaRootReport:
    """Measured root of f next to the two competing closed-form candidates."""
    lam, a = params.lam, params.alpha
    return EtaRootReport(critical_eta(params), lam / (lam + a + 1.0), lam / (lam + a + 2.0))


# --------------------------------------------------------------------------
# Z-chain


@dataclass(frozen=True)
class ZChainLaw:
    """``X ~ Bin(x_trials, x_p)``, ``Y ~ Bin(y_trials, y_p)``, ``N ~ Geom(geom_p)`` on {0, 1, ...}."""

    x_trials: int
    x_p: float
    y_trials: int
    y_p: float
    geom_p: float

    @property
    def mean_n(self) -> float:
        return math.inf if self.geom_p == 0 else (1.0 - self.geom_p) / self.geom_p


def zchain_law(z: int, n: int, params: Params, t: float) -> ZChainLaw:
    """Parameters of one Z-chain step given the one-phase length ``t``."""
    if not 0 <= z <= n:
        raise ValidationError("need 0 <= z <= n")
    if t < 0:
        raise ValidationError("t must be >= 0")
    return ZChainLaw(int(z), u_prob(params, t), int(n - z), v_prob(params, t), lambda_hat(params))


@njit(cache=True)
def _uv(g1, g2, lam, t):
    e1 = math.exp(-g1 * t)
    e2 = math.exp(-g2 * t)
    d = g2 - g1
    u = e1 + (1.0 - g1) * (e2 - e1) / d
    v = lam * (e1 - e2) / d
    if u > 1.0:
        u = 1.0
    if v < 0.0:
        v = 0.0
    return u, v


@njit(cache=True)
def _zchain_step(z, n, g1, g2, lam, lh, state):
    t = _rng.next_exponential(state)
    u, v = _uv(g1, g2, lam, t)
    s = _rng.next_binomial(state, z, u) + _rng.next_binomial(state, n - z, v)
    if lh <= 0.0:
        return 0
    s -= _rng.next_geometric(state, lh)
    return s if s > 0 else 0


@njit(cache=True, nogil=True)
def _zchain_batch(n, g1, g2, lam, lh, base, first, max_steps, out):
    state = np.empty(1, np.uint64)
    for r in range(out.shape[0]):
        state[0] = _rng.key_for(base, first + r)
        z = n
        i = 0
        while z > 0 and i < max_steps:
            z = _zchain_step(z, n, g1, g2, lam, lh, state)
            i += 1
        out[r] = i if z == 0 else -1


@njit(cache=True, nogil=True)
def _zchain_first_step(z0, n, g1, g2, lam, lh, state, samples):
    hits = 0
    for _ in range(samples):
        if _zchain_step(z0, n, g1, g2, lam, lh, state) == 0:
            hits += 1
    return hits


def _chain_params(params: Params):
    sp = gamma_pair(params)
    return sp.gamma1, sp.gamma2, params.lam, lambda_hat(params)


def zchain_batch(n: int, params: Params, replicas: int, master_seed: int = 0, first_replica: int = 0,
                 max_steps: int = 2**62) -> np.ndarray:
    """Absorption step counts of the Z-chain from ``Z_0 = n``; -1 marks runs stopped at ``max_steps``."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    out = np.empty(replicas, np.int64)
    _zchain_batch(int(n), *_chain_params(params), _rng.batch_base(master_seed), np.int64(first_replica),
                  np.int64(max_steps), out)
    return out


def zchain_run(n: int, params: Params, master_seed: int = 0, replica_index: int = 0) -> int:
    """Number of one-phases until the count of infected active leaves first hits 0."""
    return int(zchain_batch(n, params, 1, master_seed, replica_index)[0])


def zchain_step_coupled(z: int, n: int, params: Params, t: float, n_geom: int,
                         leaf_uniforms: np.ndarray) -> int:
    """One Z-chain step driven by explicit randomness.

    Leaf ``i`` ends the one-phase of length ``t`` infected when
    ``leaf_uniforms[i]`` falls below ``u(t)`` (leaves ``0..z-1``, infected at
    the start) or below ``v(t)`` (the rest); ``n_geom`` leaves are then lost
    before the centre is reinfected.  Sharing ``(t, n_geom, leaf_uniforms)``
    across starting values couples the chains monotonically because
    ``v <= u``.
    """
    if not 0 <= z <= n or len(leaf_uniforms) != n:
        raise ValidationError("need 0 <= z <= n and one uniform per leaf")
    u = min(u_prob(params, t), 1.0)
    v = max(v_prob(params, t), 0.0)
    thr = np.where(np.arange(n) < z, u, v)
    return max(int(np.sum(np.asarray(leaf_uniforms) < thr)) - int(n_geom), 0)


def zchain_death_probability(n: int, params: Params, samples: int, master_seed: int = 0,
                             z0: int | None = None) -> tuple[float, float, int]:
    """Monte Carlo ``P(Z_1 = 0 | Z_0 = z0)`` (default ``z0 = n``): (estimate, SE, hits)."""
    z0 = n if z0 is None else z0
    state = _rng.new_stream(master_seed, int(n))
    hits = _zchain_first_step(int(z0), int(n), *_chain_params(params), state, int(samples))
    p = hits / samples
    return p, math.sqrt(max(p * (1 - p), 1.0 / samples) / samples), int(hits)


def zchain_death_probability_exact(n: int, params: Params) -> float:
    """``P(Z_1 = 0 | Z_0 = n) = int e^{-t} (1 - lam_hat u(t))^n dt`` by quadrature."""
    lh = lambda_hat(params)
    if lh == 0.0:
        return 1.0
    val, _ = integrate.quad(lambda t: math.exp(-t) * (1.0 - lh * u_prob(params, t)) ** n,
                            0.0, 60.0, epsabs=0.0, epsrel=1e-11, limit=400)
    return val


# --------------------------------------------------------------------------
# (K, L)-chain


@njit(cache=True)
def _kl_advance(st, n, g1, g2, lam, alpha, lh, t_limit, state, buf):
    """Advance one replica held in ``st = [K, L, t, phases, dead, ext_time]`` until ``t >= t_limit`` or death.

    One-phase: length ``T ~ Exp(1)``; 1A and 0A leaves end 1A with
    probabilities ``u(T)`` and ``v(T)``; each 1D leaf recovers at ``s ~ Exp(1)``
    and, if ``s < T``, ends 1A with probability ``v(T - s)``.
    Zero-phase: with ``m`` infected active leaves the next event comes after
    ``Exp((lam + alpha + 1) m)``; it is the centre's reinfection with
    probability ``lam_hat``, else a leaf leaving 1A (to 1D with probability
    ``alpha / (1 + alpha)``).  1D leaves recover at rate 1 throughout.
    """
    K = int(st[0])
    L = int(st[1])
    t = st[2]
    phases = int(st[3])
    la1 = lam + alpha + 1.0
    p_d = alpha / (1.0 + alpha)
    log_q = math.log1p(-lh)
    while t < t_limit:
        T = _rng.next_exponential(state)
        phases += 1
        u, v = _uv(g1, g2, lam, T)
        kt = _rng.next_binomial(state, K, u) + _rng.next_binomial(state, n - K - L, v)
        lt = 0
        for _ in range(L):
            s = _rng.next_exponential(state)
            if s < T:
                _, vs = _uv(g1, g2, lam, T - s)
                if _rng.next_uniform(state) < vs:
                    kt += 1
            else:
                lt += 1
        t += T
        if lh > 0.0:
            N = _rng.next_geometric_log(state, log_q)
        else:
            N = kt
        if N >= kt:
            # every infected active leaf leaves before the centre is reinfected
            tz = 0.0
            end = 0.0
            for i in range(kt):
                tz += _rng.next_exponential(state) / (la1 * (kt - i))
                if _rng.next_uniform(state) < p_d:
                    r = tz + _rng.next_exponential(state)
                    if r > end:
                        end = r
            if tz > end:
                end = tz
            for _ in range(lt):
                r = _rng.next_exponential(state)
                if r > end:
                    end = r
            st[0] = 0
            st[1] = 0
            st[2] = t + end
            st[3] = phases
            st[4] = 1
            st[5] = t + end
            return
        tz = 0.0
        c = 0
        for i in range(N):
            tz += _rng.next_exponential(state) / (la1 * (kt - i))
            if _rng.next_uniform(state) < p_d:
                buf[c] = tz + _rng.next_exponential(state)
                c += 1
        tz += _rng.next_exponential(state) / (la1 * (kt - N))
        new_l = 0
        for j in range(c):
            if buf[j] > tz:
                new_l += 1
        for _ in range(lt):
            if _rng.next_exponential(state) > tz:
                new_l += 1
        K = kt - N
        L = new_l
        t += tz
    st[0] = K
    st[1] = L
    st[2] = t
    st[3] = phases


@njit(cache=True, nogil=True)
def _kl_batch_advance(states, keys, alive_idx, n, g1, g2, lam, alpha, lh, t_limit):
    buf = np.empty(n + 1)
    stream = np.empty(1, np.uint64)
    for j in range(alive_idx.shape[0]):
        r = alive_idx[j]
        stream[0] = keys[r]
        _kl_advance(states[r], n, g1, g2, lam, alpha, lh, t_limit, stream, buf)
        keys[r] = stream[0]


class KLEnsemble:
    """Independent (K, L)-chain replicas advanced together in time slices.

    Replica ``r`` uses the stream keyed by ``(master_seed, first_replica + r)``.
    Because each replica keeps its own stream position, the trajectories do
    not depend on how time is sliced.
    """

    def __init__(self, n_leaves: int, params: Params, replicas: int, master_seed: int = 0,
                 first_replica: int = 0):
        if n_leaves < 1:
            raise ValidationError("need at least one leaf")
        self.n = int(n_leaves)
        self.params = params
        self._chain_params = _chain_params(params)
        self.states = np.zeros((replicas, 6))
        self.states[:, 0] = n_leaves
        base = _rng.batch_base(master_seed)
        self.keys = np.array([_rng.key_for(base, first_replica + r) for r in range(replicas)],
                             dtype=np.uint64)

    @property
    def alive(self) -> np.ndarray:
        return self.states[:, 4] == 0

    @property
    def times(self) -> np.ndarray:
        return self.states[:, 2]

    @property
    def phases(self) -> np.ndarray:
        return self.states[:, 3].astype(np.int64)

    def advance(self, t_limit: float) -> None:
        """Run every live replica up to the first phase boundary at or after ``t_limit``."""
        idx = np.flatnonzero(self.alive)
        g1, g2, lam, lh = self._chain_params
        _kl_batch_advance(self.states, self.keys, idx, self.n, g1, g2, lam, self.params.alpha, lh,
                          float(t_limit))


def klchain_run(n: int, params: Params, master_seed: int = 0, replica_index: int = 0) -> tuple[int, float]:
    """Run the (K, L)-chain from ``K = n`` leaves infected to extinction.

    Returns the number of one-phases and the extinction time in continuous time.
    """
    ens = KLEnsemble(n, params, 1, master_seed, replica_index)
    ens.advance(math.inf)
    return int(ens.phases[0]), float(ens.times[0])


def klchain_batch(n: int, params: Params, replicas: int, master_seed: int = 0,
                  first_replica: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Phase counts and extinction times for ``replicas`` independent runs."""
    ens = KLEnsemble(n, params, replicas, master_seed, first_replica)
    ens.advance(math.inf)
    return ens.phases, ens.times.copy()


# --------------------------------------------------------------------------
# event-level reduced star


@njit(cache=True, nogil=True)
def _reduced_batch(n_leaves, lam, alpha, t_max, base, first, status, times, events, phases):
    state = np.empty(1, np.uint64)
    for r in range(status.shape[0]):
        state[0] = _rng.key_for(base, first + r)
        centre = 1
        a1 = n_leaves  # 1A
        a0 = 0  # 0A
        d0 = 0  # 0D
        d1 = 0  # 1D
        t = 0.0
        ev = 0
        ph = 1
        st = 0
        while True:
            if centre == 0 and a1 == 0 and d1 == 0:
                st = 0
                break
            if centre == 1:
                r_inf = lam * a0
                r_rec = float(a1)
                r_av = alpha * a0
                r_d1 = float(d1)
                total = r_inf + r_rec + r_av + r_d1 + 1.0
            else:
                r_rec = float(a1)
                r_av = alpha * a1
                r_d1 = float(d1)
                r_inf = lam * a1
                total = r_rec + r_av + r_d1 + r_inf
            t += _rng.next_exponential(state) / total
            if t > t_max:
                t = t_max
                st = 1
                break
            ev += 1
            x = _rng.next_uniform(state) * total
            if centre == 1:
                if x < r_inf:
                    a0 -= 1
                    a1 += 1
                elif x < r_inf + r_rec:
                    a1 -= 1
                    a0 += 1
                elif x < r_inf + r_rec + r_av:
                    a0 -= 1
                    d0 += 1
                elif x < r_inf + r_rec + r_av + r_d1:
                    d1 -= 1
                    a0 += 1
                else:
                    centre = 0
                    a0 += d0
                    d0 = 0
            else:
                if x < r_rec:
                    a1 -= 1
                    a0 += 1
                elif x < r_rec + r_av:
                    a1 -= 1
                    d1 += 1
                elif x < r_rec + r_av + r_d1:
                    d1 -= 1
                    a0 += 1
                else:
                    centre = 1
                    ph += 1
        status[r] = st
        times[r] = t
        events[r] = ev
        phases[r] = ph


@dataclass
class ReducedStarBatch:
    status: np.ndarray
    time: np.ndarray
    events: np.ndarray
    one_phases: np.ndarray
    master_seed: int
    first_replica: int

    def record(self, i: int) -> SurvivalRecord:
        ext = self.status[i] == 0
        t = float(self.time[i])
        return SurvivalRecord(Outcome.EXTINCT if ext else Outcome.ALIVE_AT_CUTOFF, t if ext else None,
                              int(self.events[i]), self.master_seed, self.first_replica + i, t)


def reduced_star_batch(n: int, params: Params, replicas: int, master_seed: int = 0,
                       first_replica: int = 0, t_max: float = math.inf) -> ReducedStarBatch:
    """Event-by-event leaf-count dynamics of the star on ``n`` vertices, all infected at time 0.

    Besides the one-phase moves, the zero-phase includes recovery of 1D
    leaves (``1D -> 0A`` at rate 1), which the full process performs at every
    time and which is needed for the centre-healthy state to be absorbing
    only once all leaves are healthy.
    """
    if n < 2:
        raise ValidationError("star needs n >= 2")
    status = np.zeros(replicas, np.int8)
    times = np.zeros(replicas)
    events = np.zeros(replicas, np.int64)
    phases = np.zeros(replicas, np.int64)
    _reduced_batch(int(n - 1), params.lam, params.alpha, float(t_max), _rng.batch_base(master_seed),
                   np.int64(first_replica), status, times, events, phases)
    return ReducedStarBatch(status, times, events, phases, master_seed, first_replica)


def reduced_star_run(n: int, params: Params, master_seed: int = 0, replica_index: int = 0,
                     t_max: float = math.inf) -> SurvivalRecord:
    """Single replica of :func:`reduced_star_batch`."""
    return reduced_star_batch(n, params, 1, master_seed, replica_index, t_max).record(0)
