import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cpasim import rng


def test_streams_are_reproducible():
    a = rng.draws("uniform", 1000, master_seed=5, replica_index=3)
    b = rng.draws("uniform", 1000, master_seed=5, replica_index=3)
    assert np.array_equal(a, b)


def test_streams_differ_across_replicas_and_seeds():
    a = rng.draws("uniform", 100, master_seed=5, replica_index=3)
    b = rng.draws("uniform", 100, master_seed=5, replica_index=4)
    c = rng.draws("uniform", 100, master_seed=6, replica_index=3)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_uniform_range_and_law():
    u = rng.draws("uniform", 200_000, master_seed=1)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_exponential_law():
    x = rng.draws("exponential", 200_000, master_seed=2)
    assert x.min() > 0
    assert stats.kstest(x, "expon").pvalue > 1e-3
    # tail beyond the ziggurat base strip
    tail = np.mean(x > 8.0)
    assert abs(tail - np.exp(-8.0)) < 5 * np.sqrt(np.exp(-8.0) / x.size)


@pytest.mark.parametrize("n,p", [(5, 0.3), (40, 0.5), (1000, 0.02), (1000, 0.7), (30000, 0.4)])
def test_binomial_matches_pmf(n, p):
    k = rng.draws("binomial", 100_000, master_seed=3, n=n, p=p)
    assert k.min() >= 0 and k.max() <= n
    assert abs(k.mean() - n * p) < 5 * np.sqrt(n * p * (1 - p) / k.size)
    assert abs(k.var() - n * p * (1 - p)) < 0.05 * n * p * (1 - p) + 0.05
    lo, hi = stats.binom.ppf([0.001, 0.999], n, p).astype(int)
    edges = np.arange(lo, hi + 2) - 0.5
    obs, _ = np.histogram(np.clip(k, lo, hi), bins=edges)
    exp = np.diff(stats.binom.cdf(edges, n, p))
    exp[0] += stats.binom.cdf(lo - 1, n, p)
    exp[-1] += stats.binom.sf(hi, n, p)
    exp *= k.size
    keep = exp > 5
    chi2 = np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep])
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 1e-4


def test_binomial_edge_cases():
    assert np.all(rng.draws("binomial", 50, n=10, p=0.0) == 0)
    assert np.all(rng.draws("binomial", 50, n=10, p=1.0) == 10)
    assert np.all(rng.draws("binomial", 50, n=0, p=0.5) == 0)


def test_geometric_mean():
    p = 0.25
    g = rng.draws("geometric", 200_000, master_seed=4, p=p)
    assert g.min() >= 0
    mean = (1 - p) / p
    se = np.sqrt((1 - p) / p**2 / g.size)
    assert abs(g.mean() - mean) < 4 * se


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), idx=st.integers(0, 2**40))
def test_uniforms_in_unit_interval(seed, idx):
    u = rng.draws("uniform", 64, master_seed=seed, replica_index=idx)
    assert np.all((u >= 0) & (u < 1))
