import math

import numpy as np
import pytest
from scipy import stats

from privfl import privunit as P

import oracles
from frozen import PRIVUNIT_UTILITY_C as UTILITY_C

MNIST_D = 3_274_634
CIFAR_D = 1_068_298

@pytest.mark.parametrize("eps,d,gamma", [
    (0.99 * 500, MNIST_D, 0.01729), (0.99 * 250, MNIST_D, 0.01217),
    (0.99 * 100, MNIST_D, 0.00760), (0.99 * 50, MNIST_D, 0.00526),
    (0.99 * 5000, CIFAR_D, 0.09598), (0.99 * 1000, CIFAR_D, 0.04291),
    (0.99 * 500, CIFAR_D, 0.03027), (0.99 * 100, CIFAR_D, 0.01331),
])
def test_solve_gamma_table_values(eps, d, gamma):
    assert P.solve_gamma(eps, d) == pytest.approx(gamma, abs=1e-4)


def test_solve_gamma_small_eps_limit():
    d = 1000
    for eps in (1e-4, 1e-6):
        ref = eps / 2 * math.sqrt(math.pi / (2 * (d - 1)))
        assert P.solve_gamma(eps, d) == pytest.approx(ref, rel=1e-6)


def test_solve_gamma_monotone_in_eps():
    for d in (10, 500, 10**5):
        gs = [P.solve_gamma(e, d) for e in np.geomspace(0.05, 500, 40)]
        assert np.all(np.diff(gs) >= 0)


def test_solve_gamma_meets_a_sufficient_condition():
    for d in (10, 100, 10**4):
        for eps in (0.5, 2, 8, 40):
            g = P.solve_gamma(eps, d)
            small_ok = g <= math.tanh(eps / 2) * math.sqrt(math.pi / (2 * (d - 1))) * (1 + 1e-12)
            large_ok = g >= math.sqrt(2 / d) and P.large_branch_slack(g, eps, d) >= -1e-9
            assert small_ok or large_ok


def test_solve_gamma_rejects_bad_input():
    with pytest.raises(ValueError):
        P.solve_gamma(0, 10)
    with pytest.raises(ValueError):
        P.solve_gamma(1, 1)


@pytest.mark.parametrize("d,gamma,p", [(5, 0.3, 0.8), (20, 0.3, 0.9), (100, 0.05, 0.7), (1000, 0.02, 0.6),
                                       (50, 0.0, 1.0)])
def test_norm_constant_matches_quadrature(d, gamma, p):
    assert P.norm_constant(d, gamma, p) == pytest.approx(oracles.privunit_m(d, gamma, p), rel=1e-10)


def test_norm_constant_large_d_stays_finite():
    g = P.solve_gamma(495, MNIST_D)
    m = P.norm_constant(MNIST_D, g, P.cap_prob_for_eps0(5))
    assert 0 < m < 1 and np.isfinite(m)


def test_norm_constant_zero_is_invalid():
    with pytest.raises(P.InvalidParams):
        P.make_params(2, 0.0, 0.5)
    with pytest.raises(P.InvalidParams):
        P.make_params(10, 1.2, 0.5)


@pytest.mark.parametrize("d,gamma,p", [(10, 0.4, 0.5), (30, 0.2, 0.9), (500, 0.05, 0.6)])
def test_privacy_ratio_matches_quadrature(d, gamma, p):
    assert P.privacy_ratio(d, gamma, p) == pytest.approx(oracles.privunit_ratio(d, gamma, p), rel=1e-10)


def test_privacy_ratio_uniform_case_is_zero():
    assert P.privacy_ratio(20, 0.0, 0.5) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("eps", [0.5, 1, 5, 50, 495])
@pytest.mark.parametrize("d", [10, 100, 10**4, 3_300_000])
def test_certificate_on_grid(eps, d):
    params = P.make_params(d, P.solve_gamma(eps, d), 0.5)
    assert P.verify_privacy_ratio(params) <= eps + 1e-9
    assert P.certifies(params, eps)


@pytest.mark.parametrize("eps,d", [(50, 100), (50, 10**4), (50, 3_300_000), (495, 100), (495, 10**4),
                                   (495, 3_300_000)])
def test_raising_gamma_breaks_certificate_large_branch(eps, d):
    g = min(P.solve_gamma(eps, d) * 1.01, P.GAMMA_MAX)
    assert P.privacy_ratio(d, g, 0.5) > eps


def test_p_rounds_to_one_at_huge_budget():
    # at eps0 = 50, p is exactly 1.0 in double precision and the certificate is honest about it
    params = P.params_for_eps(0.99 * 5000, 0.01 * 5000, CIFAR_D)
    assert params.p == 1.0
    assert P.verify_privacy_ratio(params) == math.inf


def test_sample_norm_is_deterministic():
    params = P.params_for_eps(3, 1, 30)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(30)
    u /= np.linalg.norm(u)
    z = P.sample(u, params, rng, n=5000)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1 / params.m, rtol=1e-12)


def test_sample_cap_fraction_and_support():
    params = P.make_params(20, 0.3, 0.7)
    rng = np.random.default_rng(1)
    u = np.zeros(20)
    u[3] = 1.0
    n = 200_000
    z = P.sample(u, params, rng, n=n)
    t = z[:, 3] * params.m
    frac = np.mean(t >= params.gamma)
    assert abs(frac - 0.7) <= 3 * math.sqrt(0.21 / n)
    assert np.all(np.abs(t) <= 1 + 1e-12)


def test_sample_unbiased_within_clt_band():
    params = P.make_params(20, P.solve_gamma(4, 20), 0.5)
    rng = np.random.default_rng(2)
    u = rng.standard_normal(20)
    u /= np.linalg.norm(u)
    n = 200_000
    z = P.sample(u, params, rng, n=n)
    se = z.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(z.mean(axis=0) - u) <= 4 * se)
    assert np.linalg.norm(z.mean(axis=0) - u) <= 3 * (1 / params.m) / math.sqrt(n)


def test_norm_constant_matches_sampled_projection():
    params = P.make_params(20, 0.3, 0.9)
    rng = np.random.default_rng(3)
    t, _ = P.sample_first_coordinate(params, 400_000, rng)
    assert abs(t.mean() - params.m) <= 3 * t.std() / math.sqrt(t.size)


def test_first_coordinate_law_matches_truncated_beta():
    # KS against the truncated law computed by the package-independent scipy beta
    d, gamma = 12, 0.25
    params = P.make_params(d, gamma, 1.0)
    t, cap = P.sample_first_coordinate(params, 20_000, np.random.default_rng(4))
    assert cap.all() and np.all(t >= gamma)
    a = (d - 1) / 2
    dist = stats.beta(a, a, loc=-1, scale=2)
    lo = dist.cdf(gamma)
    res = stats.kstest(t, lambda x: (dist.cdf(x) - lo) / (1 - lo))
    assert res.pvalue > 1e-3


def test_rotation_equivariance():
    params = P.make_params(15, 0.2, 0.8)
    e1 = np.eye(15)[0]
    rng = np.random.default_rng(5)
    u = rng.standard_normal(15)
    u /= np.linalg.norm(u)
    a = P.sample(e1, params, np.random.default_rng(6), n=10_000) @ e1
    b = P.sample(u, params, np.random.default_rng(7), n=10_000) @ u
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_degenerate_cap_collapses_to_pole():
    params = P.make_params(8, 0.999999, 1.0)
    z = P.sample(np.eye(8)[0], params, np.random.default_rng(8), n=100)
    np.testing.assert_allclose(z * params.m, np.tile(np.eye(8)[0], (100, 1)), atol=3e-3)


def test_reflection_maps_e1_to_u():
    rng = np.random.default_rng(9)
    u = rng.standard_normal((4, 6))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    e = np.tile(np.eye(6)[0], (4, 1))
    np.testing.assert_allclose(P.reflect_from_e1(u, e), u, atol=1e-14)
    # identity branch
    np.testing.assert_allclose(P.reflect_from_e1(e, u), u)


def test_draw_then_apply_equals_sample():
    params = P.params_for_eps(2, 1, 9)
    u = np.ones(9) / 3.0
    a = P.sample(u, params, np.random.default_rng(10), n=7)
    rng = np.random.default_rng(10)
    b = P.apply_noise(np.tile(u, (7, 1)), P.draw_noise(params, 7, rng), params)
    np.testing.assert_array_equal(a, b)


def test_sample_input_validation():
    params = P.make_params(5, 0.2, 0.6)
    with pytest.raises(ValueError):
        P.sample(np.ones(5), params, np.random.default_rng(0))
    with pytest.raises(ValueError):
        P.sample(np.eye(6)[0], params, np.random.default_rng(0))
    with pytest.warns(RuntimeWarning):
        P.sample(np.eye(5)[0] * (1 + 1e-8), params, np.random.default_rng(0))


def test_utility_scaling():
    for d in (10, 100, 1000, 10**4, 10**6):
        prev = math.inf
        for eps in (0.25, 0.5, 1, 2, 4, 8, 16, 32, 64):
            if eps > d:
                continue
            inv_m = 1 / P.norm_constant(d, P.solve_gamma(eps, d), 0.5)
            assert inv_m <= prev * (1 + 1e-12)
            assert inv_m <= UTILITY_C * math.sqrt(d / min(eps, eps * eps))
            prev = inv_m
