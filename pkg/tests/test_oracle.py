import math

import numpy as np
import pytest

from cpasim import oracle
from cpasim.core import Params, build_topology, custom_topology, initial_configuration, simulate_batch


def two_path():
    return custom_topology(2, [(0, 1), (1, 0)])


def test_single_vertex_space():
    topo = custom_topology(1, [])
    cfg = initial_configuration(topo)
    space = oracle.enumerate_state_space(topo, cfg, Params(1, 1))
    assert len(space) == 2
    assert oracle.mean_absorption_time(space, oracle.generator_matrix(space), cfg) == 1.0


def test_two_path_state_counts():
    cfg = initial_configuration(two_path(), [0])
    assert len(oracle.enumerate_state_space(two_path(), cfg, Params(1, 1))) == 6
    assert len(oracle.enumerate_state_space(two_path(), cfg, Params(1, 0))) == 4


@pytest.mark.parametrize("lam,alpha,want", [(1, 1, 1.25), (1, 0, 1.5), (0, 0, 1.0), (2, 0, 2.0)])
def test_two_path_means(lam, alpha, want):
    cfg = initial_configuration(two_path(), [0])
    assert oracle.exact_mean_extinction_time(two_path(), cfg, Params(lam, alpha)) == pytest.approx(want, abs=1e-12)


def test_two_path_hand_solve_general():
    # a = 1/(1+lam+alpha) + lam/(1+lam+alpha) (1/2 + a) + alpha/(1+lam+alpha) * 1
    for lam, alpha in [(0.5, 2.0), (3.0, 0.25)]:
        want = (1 + lam / 2 + alpha) / (1 + alpha)
        cfg = initial_configuration(two_path(), [0])
        assert oracle.exact_mean_extinction_time(two_path(), cfg, Params(lam, alpha)) == pytest.approx(want)


def test_generator_rows_sum_to_zero():
    topo = build_topology("cycle", 4)
    space = oracle.enumerate_state_space(topo, initial_configuration(topo), Params(1.3, 0.7))
    Q = oracle.generator_matrix(space)
    assert np.abs(np.asarray(Q.sum(axis=1))).max() < 1e-12


def test_alpha_zero_matches_classical_count():
    topo = build_topology("cycle", 4)
    space = oracle.enumerate_state_space(topo, initial_configuration(topo), Params(1, 0))
    assert len(space) == 2 ** 4


def test_state_cap():
    topo = build_topology("cycle", 6)
    with pytest.raises(oracle.StateSpaceTooLarge):
        oracle.enumerate_state_space(topo, initial_configuration(topo), Params(1, 1), cap=50)


def test_reachable_states_valid():
    from cpasim.core import validate_configuration
    topo = build_topology("star", 4)
    space = oracle.enumerate_state_space(topo, initial_configuration(topo), Params(1, 1))
    for s in space.states:
        validate_configuration(s, topo)


@pytest.mark.parametrize("kind,n", [("cycle", 3), ("star", 4)])
def test_monte_carlo_agrees(kind, n):
    topo = build_topology(kind, n)
    cfg = initial_configuration(topo, [0])
    p = Params(1.5, 0.5)
    exact = oracle.exact_mean_extinction_time(topo, cfg, p)
    res = simulate_batch(cfg, topo, p, 50_000, master_seed=3)
    assert abs(res.time.mean() - exact) < 3 * res.time.std(ddof=1) / math.sqrt(res.time.size)


def test_edge_escape_probability():
    assert oracle.edge_escape_probability(Params(3, 2)) == 0.5
    assert oracle.edge_escape_probability(Params(1, 1)) == pytest.approx(1 / 3)
    assert oracle.edge_escape_probability(Params(0, 1)) == 0.0


def test_edge_escape_against_exponential_race():
    gen = np.random.default_rng(0)
    m = 1_000_000
    inf, rec, blk = gen.exponential(1.0, m), gen.exponential(1.0, m), gen.exponential(1.0, m)
    freq = np.mean(inf < np.minimum(rec, blk))
    assert abs(freq - 1 / 3) < 3 * math.sqrt(2 / 9 / m)


def test_drift_lambda_zero():
    d = oracle.edge_drift_experiment(Params(0, 1), 500, window=10)
    assert d.left_steps == 0


def test_drift_bounded_by_escape_probability():
    p = Params(1, 1)
    d = oracle.edge_drift_experiment(p, 4000, master_seed=1, window=15)
    assert d.frequency <= oracle.edge_escape_probability(p) + 3 * d.se


def test_drift_large_lambda():
    p = Params(30, 1)
    d = oracle.edge_drift_experiment(p, 2000, master_seed=2, window=15)
    assert abs(d.frequency - oracle.edge_escape_probability(p)) < 0.02
