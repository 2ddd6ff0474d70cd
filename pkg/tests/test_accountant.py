import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privfl import accountant as A

import oracles


def test_renyi_trivial_cases():
    assert A.renyi2_per_round(0.0, 1.0, 1.0) == 0.0
    assert A.renyi2_per_round(0.1, 0.0, 1.0) == 0.0
    assert A.renyi2_per_round(0.1, 1.0, 0.0) == math.inf


@pytest.mark.parametrize("q,rho,sigma", [(0.01, 1.0, 2.0), (2e-5, 100.0, 5.0), (0.3, 1.0, 0.5), (0.05, 3.0, 0.2)])
def test_renyi_matches_high_precision(q, rho, sigma):
    assert A.renyi2_per_round(q, rho, sigma) == pytest.approx(oracles.renyi2(q, rho, sigma), rel=1e-12)


def test_renyi_huge_ratio_branch():
    # rho^2 / sigma^2 = 1000, past the expm1 overflow
    q = 0.01
    assert A.renyi2_per_round(q, 100.0, math.sqrt(10.0)) == pytest.approx(oracles.renyi2(q, 100.0, math.sqrt(10.0)),
                                                                           rel=1e-12)


def test_renyi_monotone():
    qs = np.linspace(0.001, 0.5, 20)
    assert np.all(np.diff([A.renyi2_per_round(q, 1.0, 1.0) for q in qs]) > 0)
    rhos = np.linspace(0.1, 5, 20)
    assert np.all(np.diff([A.renyi2_per_round(0.1, r, 1.0) for r in rhos]) > 0)
    sigmas = np.linspace(0.2, 5, 20)
    assert np.all(np.diff([A.renyi2_per_round(0.1, 1.0, s) for s in sigmas]) < 0)


@settings(max_examples=100, deadline=None)
@given(T=st.integers(1, 10_000), q=st.floats(1e-6, 0.5), rho=st.floats(0.01, 1000), eps=st.floats(1e-3, 50))
def test_sigma_round_trip(T, q, rho, eps):
    sigma = A.sigma_for_budget(T, q, rho, eps)
    assert T * A.renyi2_per_round(q, rho, sigma) == pytest.approx(eps, rel=1e-9, abs=1e-12)


def test_sigma_reference_value():
    assert A.sigma_for_budget(100, 2e-5, 100, 1.0) == pytest.approx(24.2255, rel=1e-5)


def test_linearized_spends_at_most_eps():
    for T, q, rho, eps in ((100, 2e-5, 100, 1.0), (10, 0.01, 1, 5.0), (1000, 0.001, 2, 0.5)):
        s_lin = A.sigma_linearized(T, q, rho, eps)
        assert s_lin >= A.sigma_for_budget(T, q, rho, eps)
        assert T * A.renyi2_per_round(q, rho, s_lin) <= eps


def test_approximation_ratio_tends_to_one():
    # large T q^2 / eps: log(1 + x) ~ x
    # (the approximation also drops the 1 - q factor, hence the small q)
    ratios = [A.sigma_for_budget(T, 1e-4, 1.0, 1.0) / A.sigma_approx(T, 1e-4, 1.0, 1.0) for T in (1e8, 1e10, 1e12)]
    assert abs(ratios[-1] - 1) < abs(ratios[0] - 1)
    assert ratios[-1] == pytest.approx(1.0, abs=1e-3)


def test_sigma_validation():
    with pytest.raises(ValueError):
        A.sigma_for_budget(0, 0.1, 1, 1)
    with pytest.raises(ValueError):
        A.sigma_for_budget(10, 1.0, 1, 1)


def test_renyi_to_dp():
    assert A.renyi_to_dp(0.0, 3.0, 1e-5) == pytest.approx(math.log(1e5) / 2, rel=1e-14)
    assert A.renyi_to_dp(1.0, 2.0, 1e-9) == pytest.approx(1 + math.log(1e9), rel=1e-14)
    vals = [A.renyi_to_dp(1.0, lam, 1e-6) for lam in (1.5, 2, 4, 16)]
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(ValueError):
        A.renyi_to_dp(1.0, 1.0, 1e-6)
    with pytest.raises(ValueError):
        A.renyi_to_dp(1.0, 2.0, 0.0)


def test_dp_to_renyi_branches():
    lam = 2.0
    assert A.dp_to_renyi(0.1, lam) == pytest.approx(2 * lam * 0.01)
    assert A.dp_to_renyi(3.0, lam) == 3.0
    cross = 1 / (2 * lam)
    assert A.dp_to_renyi(cross, lam) == pytest.approx(cross)
    assert 2 * lam * cross ** 2 == pytest.approx(cross)


def test_conversion_grid():
    for e in np.linspace(0, 5, 11):
        for lam in (1.5, 2.0, 8.0):
            for delta in (1e-3, 1e-9):
                assert A.renyi_to_dp(e, lam, delta) == pytest.approx(e + math.log(1 / delta) / (lam - 1), rel=1e-14)
            assert A.dp_to_renyi(e, lam) == pytest.approx(min(e, 2 * lam * e * e), rel=1e-14)


def test_composition_additive():
    st_ = A.AccountantState(q=0.01, rho=1.0, sigma=1.5)
    one = A.renyi2_per_round(0.01, 1.0, 1.5)
    for _ in range(7):
        st_.step()
    st_.step(rounds=93)
    assert st_.eps_renyi_total == 100 * one
    assert st_.rounds_so_far == 100
    assert np.all(np.diff(st_.history) > 0)
    assert st_.to_dp(1e-6) == pytest.approx(100 * one + math.log(1e6))


def test_validity_flag():
    assert A.approximation_valid(0.01)
    assert not A.approximation_valid(0.2)
    assert not A.AccountantState(q=0.06, rho=1, sigma=1).valid
