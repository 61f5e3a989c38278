import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.linalg import expm

from cpasim import star
from cpasim.core import Params, ValidationError, build_topology, custom_topology, initial_configuration
from cpasim.oracle import exact_mean_extinction_time

P11 = Params(1, 1)
rates = st.floats(0.01, 20.0)


def test_gamma_pair_unit():
    sp = star.gamma_pair(P11)
    assert sp.gamma1 == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-14)
    assert sp.gamma2 == pytest.approx((3 + math.sqrt(5)) / 2, abs=1e-14)


def test_gamma_pair_alpha_zero():
    sp = star.gamma_pair(Params(2, 0))
    assert sp.gamma1 == 0.0 and sp.gamma2 == pytest.approx(3.0)


def test_degenerate_spectrum():
    with pytest.raises(star.DegenerateSpectrumError):
        star.gamma_pair(Params(0, 1))


@settings(max_examples=200)
@given(lam=rates, alpha=rates)
def test_spectral_identities(lam, alpha):
    p = Params(lam, alpha)
    sp = star.gamma_pair(p)
    assert 0 < sp.gamma1 <= sp.gamma2
    assert sp.gamma1 + sp.gamma2 == pytest.approx(lam + alpha + 1, rel=1e-12)
    assert sp.gamma1 * sp.gamma2 == pytest.approx(alpha, rel=1e-12)
    assert star.delta_exponent(p) * sp.gamma1 == pytest.approx(1.0, rel=1e-14)


def test_eigenvalues_of_leaf_generator():
    p = Params(1.7, 0.4)
    ev = np.sort(-np.linalg.eigvals(star.leaf_generator(p)).real)
    sp = star.gamma_pair(p)
    assert ev == pytest.approx([0.0, sp.gamma1, sp.gamma2], abs=1e-12)


def test_delta_and_lambda_hat_values():
    assert star.delta_exponent(P11) == pytest.approx(2.618034, abs=1e-6)
    assert star.delta_exponent(Params(1, 0)) == math.inf
    assert star.lambda_hat(Params(1, 0)) == 0.5
    assert star.lambda_hat(P11) == pytest.approx(1 / 3)
    assert star.lambda_hat(Params(0, 3)) == 0.0


@pytest.mark.parametrize("lam,alpha", [(1, 1), (0.3, 2.0), (5.0, 0.1), (2.0, 7.0)])
def test_u_v_match_matrix_exponential(lam, alpha):
    p = Params(lam, alpha)
    Q = star.leaf_generator(p)
    for t in (0.0, 0.1, 0.7, 2.0, 6.0):
        P = expm(Q * t)
        assert star.u_prob(p, t) == pytest.approx(P[0, 0], abs=1e-12)
        assert star.v_prob(p, t) == pytest.approx(P[1, 0], abs=1e-12)


def test_u_v_at_zero_exact():
    for lam, alpha in [(1, 1), (3, 0.5), (0.2, 9)]:
        p = Params(lam, alpha)
        assert star.u_prob(p, 0.0) == 1.0
        assert star.v_prob(p, 0.0) == 0.0


def test_v_peak():
    t = star.v_peak_time(P11)
    assert t == pytest.approx(0.8609, abs=1e-4)
    h = 1e-5
    deriv = (star.v_prob(P11, t + h) - star.v_prob(P11, t - h)) / (2 * h)
    assert abs(deriv) < 1e-6


def test_u_decreasing_and_ordering():
    ts = np.linspace(0, 10, 2001)
    for lam, alpha in [(1, 1), (4, 0.3), (0.5, 3)]:
        p = Params(lam, alpha)
        u, v = star.u_prob(p, ts), star.v_prob(p, ts)
        assert np.all(np.diff(u) < 0)
        assert np.all((0 <= v) & (v <= u + 1e-15) & (u <= 1))


def test_f_eta_quadrature_matches_closed_form():
    for lam, alpha in [(1, 1), (2, 0.5), (0.4, 3)]:
        p = Params(lam, alpha)
        for eta in np.linspace(0, 1, 11):
            assert star.f_eta(p, eta) == pytest.approx(star.f_eta_closed_form(p, eta), abs=1e-11)


def test_f_signs_and_root():
    assert star.f_eta(P11, 0.0) > 0
    assert star.f_eta(P11, 1.0) < 0
    assert star.critical_eta(P11) == pytest.approx(1 / 3, abs=1e-6)
    assert abs(star.f_eta(P11, 1 / 3)) < 1e-10


def test_eta_root_report_flags_candidate():
    rep = star.eta_root_report(Params(2, 1.5))
    assert rep.matches == "lam/(lam+alpha+1)"
    assert "lam/(lam+alpha+2)" in rep.summary()


def test_f_decreasing():
    p = Params(3, 2)
    vals = [star.f_eta(p, e) for e in np.linspace(0, 1, 41)]
    assert np.all(np.diff(vals) < 0)


# -- Z-chain ---------------------------------------------------------------


def test_zchain_law_degenerate_cases():
    law = star.zchain_law(0, 10, P11, 1.3)
    assert law.x_trials == 0
    law = star.zchain_law(4, 10, P11, 0.0)
    assert law.x_p == 1.0 and law.y_p == 0.0
    assert law.mean_n == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        star.zchain_law(11, 10, P11, 1.0)


def test_geometric_moment():
    from cpasim import rng
    lh = star.lambda_hat(P11)
    g = rng.draws("geometric", 1_000_000, master_seed=12, p=lh)
    se = g.std() / math.sqrt(g.size)
    assert abs(g.mean() - (1 - lh) / lh) < 3 * se


def test_zchain_lambda_zero_dies_immediately():
    assert np.all(star.zchain_batch(20, Params(0, 2), 50) == 1)


def test_zchain_absorbs():
    steps = star.zchain_batch(10, P11, 2000, master_seed=3)
    assert np.all(steps >= 1)


def test_zchain_death_probability_matches_quadrature():
    for n in (5, 20):
        p, se, _ = star.zchain_death_probability(n, P11, 400_000, master_seed=n)
        exact = star.zchain_death_probability_exact(n, P11)
        assert abs(p - exact) < 4 * se


def test_zchain_coupling_monotone():
    gen = np.random.default_rng(0)
    n = 30
    for _ in range(10_000 // 10):
        t = gen.exponential()
        ng = gen.geometric(star.lambda_hat(P11)) - 1
        us = gen.random(n)
        vals = [star.zchain_step_coupled(z, n, P11, t, ng, us) for z in range(0, n + 1, 3)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


# -- (K, L) chain and reduced star ---------------------------------------


def test_klchain_alpha_zero_matches_zchain():
    p = Params(1.5, 0.0)
    ph, _ = star.klchain_batch(8, p, 10_000, master_seed=1)
    z = star.zchain_batch(8, p, 10_000, master_seed=2)
    assert stats.ks_2samp(ph, z).pvalue > 1e-3


def test_klchain_vs_reduced_star_phases():
    kl, _ = star.klchain_batch(3, P11, 10_000, master_seed=4)
    red = star.reduced_star_batch(4, P11, 10_000, master_seed=5)
    assert stats.ks_2samp(kl, red.one_phases).pvalue > 1e-3


def test_klchain_time_vs_reduced_star_time():
    _, t = star.klchain_batch(5, P11, 10_000, master_seed=6)
    red = star.reduced_star_batch(6, P11, 10_000, master_seed=7)
    assert stats.ks_2samp(t, red.time).pvalue > 1e-3


def test_kl_ensemble_slicing_invariant():
    a = star.KLEnsemble(30, P11, 40, master_seed=3)
    a.advance(math.inf)
    b = star.KLEnsemble(30, P11, 40, master_seed=3)
    for h in (1.0, 5.0, 20.0, 100.0, math.inf):
        b.advance(h)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.phases, b.phases)


def test_reduced_star_two_vertices_matches_oracle():
    res = star.reduced_star_batch(2, P11, 100_000, master_seed=2)
    topo = custom_topology(2, [(0, 1), (1, 0)])
    exact = exact_mean_extinction_time(topo, initial_configuration(topo), P11)
    assert abs(res.time.mean() - exact) < 3 * res.time.std(ddof=1) / math.sqrt(res.time.size)


def test_reduced_star_lambda_zero_harmonic():
    res = star.reduced_star_batch(6, Params(0, 1), 50_000, master_seed=2)
    h = sum(1 / k for k in range(1, 7))
    assert abs(res.time.mean() - h) < 3 * res.time.std(ddof=1) / math.sqrt(res.time.size)


def test_reduced_star_record():
    rec = star.reduced_star_run(5, P11, 1, 0)
    assert rec.extinction_time is not None and rec.extinction_time > 0
    rec = star.reduced_star_run(50, Params(5, 0.1), 1, 0, t_max=2.0)
    assert rec.extinction_time is None
