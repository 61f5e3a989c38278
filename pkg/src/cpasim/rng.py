"""Counter-based random streams usable from numba kernels.

Every replica owns an independent stream keyed by ``(master_seed, replica_index)``.
The stream is SplitMix64 in counter form: the k-th 64-bit output is
``mix64(key + k * GOLDEN)``, so a stream is fully described by one ``uint64``
word and replicas never share mutable state.

Kernels hold the stream as a length-1 ``uint64`` array and call the ``next_*``
helpers below.  The helpers are plain ``@njit`` functions so they inline into
the simulation loops.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_REPLICA_MULT = 0xD1B54A32D192ED03

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64(z: int) -> int:
    """SplitMix64 finalizer on Python ints (reference for the jitted version)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_key(master_seed: int, replica_index: int) -> int:
    """Initial counter word for replica ``replica_index`` under ``master_seed``."""
    if master_seed < 0 or replica_index < 0:
        raise ValueError("seeds must be non-negative integers")
    base = mix64(mix64(master_seed & MASK64) ^ 0x5851F42D4C957F2D)
    return mix64((base + (replica_index * _REPLICA_MULT)) & MASK64)


def new_stream(master_seed: int, replica_index: int) -> np.ndarray:
    """Stream state array for one replica."""
    return np.array([stream_key(master_seed, replica_index)], dtype=np.uint64)


def batch_base(master_seed: int) -> np.uint64:
    """Per-master word from which :func:`key_for` derives replica keys in kernels."""
    return np.uint64(mix64(mix64(master_seed & MASK64) ^ 0x5851F42D4C957F2D))


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


@njit(cache=True)
def key_for(base, replica_index):
    """Jitted twin of :func:`stream_key` given ``batch_base(master_seed)``."""
    return _mix(base + np.uint64(replica_index) * np.uint64(_REPLICA_MULT))


@njit(cache=True, inline="always")
def next_u64(state):
    state[0] += _U_GOLDEN
    return _mix(state[0])


@njit(cache=True, inline="always")
def next_uniform(state):
    """Uniform double on [0, 1) with 53 random bits."""
    return float(next_u64(state) >> _S11) * _INV53


def _ziggurat_exp_tables():
    # 256-layer exponential ziggurat on 53-bit integers (Marsaglia and Tsang layout)
    m = 2.0 ** 53
    de = 7.697117470131487
    te = de
    ve = 3.949659822581572e-3
    ke = np.zeros(256, dtype=np.uint64)
    we = np.zeros(256)
    fe = np.zeros(256)
    q = ve / math.exp(-de)
    ke[0] = np.uint64(int((de / q) * m))
    we[0] = q / m
    we[255] = de / m
    fe[0] = 1.0
    fe[255] = math.exp(-de)
    for i in range(254, 0, -1):
        de = -math.log(ve / de + math.exp(-de))
        ke[i + 1] = np.uint64(int((de / te) * m))
        te = de
        fe[i] = math.exp(-de)
        we[i] = de / m
    return ke, we, fe


_ZKE, _ZWE, _ZFE = _ziggurat_exp_tables()
_ZR = 7.697117470131487
_S3 = np.uint64(3)
_S8 = np.uint64(8)
_MASK8 = np.uint64(0xFF)


@njit(cache=True, inline="always")
def next_exponential(state):
    """Exp(1) variate by the ziggurat method (exact; one 64-bit draw about 99% of the time)."""
    while True:
        ri = next_u64(state) >> _S3
        idx = np.int64(ri & _MASK8)
        ri = ri >> _S8
        x = float(np.int64(ri)) * _ZWE[idx]
        if ri < _ZKE[idx]:
            return x
        if idx == 0:
            return _ZR - math.log(1.0 - next_uniform(state))
        if (_ZFE[idx - 1] - _ZFE[idx]) * next_uniform(state) + _ZFE[idx] < math.exp(-x):
            return x


@njit(cache=True, inline="always")
def next_exponential_inv(state):
    """Exp(1) variate by inversion, ``-log(1 - U)``."""
    return -math.log(1.0 - next_uniform(state))


@njit(cache=True)
def next_geometric(state, p):
    """Failures before the first success, P(k) = (1 - p)**k * p, k >= 0."""
    if p >= 1.0:
        return 0
    return next_geometric_log(state, math.log1p(-p))


@njit(cache=True, inline="always")
def next_geometric_log(state, log_q):
    """Geometric draw given ``log_q = log(1 - p) < 0`` precomputed by the caller."""
    g = next_exponential(state) / -log_q
    return int(g) if g < 4.0e18 else 4000000000000000000


@njit(cache=True)
def _binomial_inversion(state, n, p):
    q = 1.0 - p
    s = p / q
    a = (n + 1) * s
    r0 = math.exp(n * math.log1p(-p))
    while True:
        u = next_uniform(state)
        r = r0
        k = 0
        while u > r:
            u -= r
            k += 1
            if k > n:
                break
            r *= a / k - s
        if k <= n:
            return k


_LF_SIZE = 32768
_LOG_FACT = np.array([math.lgamma(k + 1.0) for k in range(_LF_SIZE)])


@njit(cache=True, inline="always")
def _log_fact(k):
    if k < _LF_SIZE:
        return _LOG_FACT[k]
    return math.lgamma(k + 1.0)


@njit(cache=True, inline="always")
def _binomial_btrs(state, n, p):
    # Hormann (1993) transformed rejection with squeeze; valid for n*p >= 10.
    q = 1.0 - p
    spq = math.sqrt(n * p * q)
    b = 1.15 + 2.53 * spq
    a = -0.0873 + 0.0248 * b + 0.01 * p
    a2 = 2.0 * a
    c = n * p + 0.5
    v_r = 0.92 - 4.2 / b
    m = int((n + 1) * p)
    h = -1.0
    lpq = 0.0
    alpha = 0.0
    while True:
        u = next_uniform(state) - 0.5
        v = next_uniform(state)
        us = 0.5 - abs(u)
        kf = (a2 / us + b) * u + c
        if kf < 0.0:
            continue
        k = int(kf)
        if k > n:
            continue
        if us >= 0.07 and v <= v_r:
            return k
        if h < 0.0:
            # log-pmf at the mode, computed only when the squeeze fails
            alpha = (2.83 + 5.1 / b) * spq
            h = _log_fact(m) + _log_fact(n - m)
            lpq = math.log(p / q)
        lv = math.log(v * alpha / (a / (us * us) + b))
        if lv <= h - _log_fact(k) - _log_fact(n - k) + (k - m) * lpq:
            return k


@njit(cache=True, inline="always")
def next_binomial(state, n, p):
    """Exact Binomial(n, p) draw."""
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    flip = p > 0.5
    if flip:
        p = 1.0 - p
    if n * p < 10.0:
        k = _binomial_inversion(state, n, p)
    else:
        k = _binomial_btrs(state, n, p)
    return n - k if flip else k


@njit(cache=True)
def fill_uniform(state, out):
    for i in range(out.shape[0]):
        out[i] = next_uniform(state)


@njit(cache=True)
def fill_exponential(state, out):
    for i in range(out.shape[0]):
        out[i] = next_exponential(state)


@njit(cache=True)
def fill_binomial(state, n, p, out):
    for i in range(out.shape[0]):
        out[i] = next_binomial(state, n, p)


@njit(cache=True)
def fill_geometric(state, p, out):
    for i in range(out.shape[0]):
        out[i] = next_geometric(state, p)


def draws(kind: str, size: int, master_seed: int = 0, replica_index: int = 0, **kw) -> np.ndarray:
    """Convenience sampler over one stream, mainly for distribution tests."""
    state = new_stream(master_seed, replica_index)
    if kind == "uniform":
        out = np.empty(size)
        fill_uniform(state, out)
    elif kind == "exponential":
        out = np.empty(size)
        fill_exponential(state, out)
    elif kind == "binomial":
        out = np.empty(size, dtype=np.int64)
        fill_binomial(state, int(kw["n"]), float(kw["p"]), out)
    elif kind == "geometric":
        out = np.empty(size, dtype=np.int64)
        fill_geometric(state, float(kw["p"]), out)
    else:
        raise ValueError(f"unknown distribution {kind!r}")
    return out
