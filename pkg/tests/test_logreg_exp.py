import csv
import math

import numpy as np
import pytest

from privfl import logreg_exp as L
from privfl import separated as Sp


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(100):
        d = int(rng.integers(2, 12))
        theta = rng.standard_normal(d) * 3
        x = rng.standard_normal(d)
        x /= np.linalg.norm(x)
        y = rng.choice([-1.0, 1.0])
        g = L.grad(theta, x, y)
        fd = np.array([(L.loss(theta + h * e, x, y) - L.loss(theta - h * e, x, y)) / (2 * h) for e in np.eye(d)])
        assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-3)


def test_gradient_norm_at_most_one():
    rng = np.random.default_rng(1)
    theta = rng.standard_normal((1000, 7)) * 20
    x = rng.standard_normal((1000, 7))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = rng.choice([-1.0, 1.0], 1000)
    assert np.all(np.linalg.norm(L.grad(theta, x, y), axis=1) <= 1.0 + 1e-15)


def test_sigmoid_and_softplus_stable():
    assert L.sigmoid(800.0) == 1.0 and L.sigmoid(-800.0) == 0.0
    assert L.softplus(0.0) == pytest.approx(math.log(2))
    assert L.softplus(-800.0) == 0.0 and L.softplus(800.0) == 800.0


def test_task_validation():
    with pytest.raises(ValueError):
        L.LogisticTask(3, 10, 2.0, np.ones(3))
    task = L.LogisticTask.make(5, 10, 2.0, seed=3)
    assert np.linalg.norm(task.theta_star) == pytest.approx(2.0)


def test_generated_data():
    task = L.LogisticTask.make(6, 200_000, 3.0, seed=1)
    x, y = L.generate(task)
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, rtol=1e-12)
    assert np.all(np.abs(x.mean(axis=0)) <= 4 / math.sqrt(6 * len(x)))
    # calibration in bins of the true margin
    s = x @ task.theta_star
    edges = np.quantile(s, np.linspace(0, 1, 11))
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, 9)
    for b in range(10):
        sel = idx == b
        p_hat = np.mean(y[sel] == 1)
        p_ref = np.mean(L.sigmoid(s[sel]))
        assert abs(p_hat - p_ref) <= 4 * math.sqrt(p_ref * (1 - p_ref) / sel.sum())
    x2, y2 = L.generate(task)
    np.testing.assert_array_equal(x, x2)


def test_oracle_zero_model_is_ln2():
    oracle = L.RiskOracle(20, 4.0, n_eval=50_000)
    assert oracle.risk(np.zeros(20), np.eye(20)[0] * 4.0) == pytest.approx(math.log(2), rel=1e-14)
    assert oracle.zero_excess > 0


def test_oracle_matches_plain_monte_carlo():
    task = L.LogisticTask.make(8, 10, 2.0, seed=0)
    oracle = L.RiskOracle(8, 2.0, n_eval=200_000, seed=0)
    rng = np.random.default_rng(9)
    theta = rng.standard_normal(8)
    x, y = L.draw_examples(task.theta_star, 400_000, rng)
    l = L.loss(theta, x, y)
    assert abs(oracle.risk(theta, task.theta_star) - l.mean()) <= 4 * l.std() / math.sqrt(l.size) + 0.01


def test_oracle_minimum_at_theta_star():
    task = L.LogisticTask.make(10, 10, 4.0, seed=2)
    oracle = L.RiskOracle(10, 4.0, n_eval=100_000)
    rng = np.random.default_rng(3)
    base = oracle.risk(task.theta_star, task.theta_star)
    assert base == pytest.approx(oracle.risk_star)
    for _ in range(10):
        v = rng.standard_normal(10)
        v /= np.linalg.norm(v)
        vals = oracle.risk(task.theta_star + np.outer([-0.5, -0.1, 0.1, 0.5], v), task.theta_star)
        assert np.all(vals > base)


def test_oracle_stable_across_seeds():
    a = L.RiskOracle(50, 4.0, n_eval=10**6, seed=0)
    b = L.RiskOracle(50, 4.0, n_eval=10**6, seed=1)
    # per-sample sd of E[l | x] is below 1; 3 sigma at 1e6 samples is 3e-3
    assert abs(a.risk_star - b.risk_star) <= 3 * math.sqrt(2) * 1e-3


def test_schedule():
    s = L.SGDSchedule.for_eps(25.0, 100)
    assert s.eta0 == pytest.approx(0.5)
    assert L.SGDSchedule.for_eps(math.inf, 100, eta0_nonprivate=4.0).eta0 == 4.0
    np.testing.assert_allclose(s.steps([1, 4]), [0.5, 0.5 * 4 ** -0.51])
    with pytest.raises(ValueError):
        L.SGDSchedule(1.0, 0.5)


def test_checkpoint_steps():
    cps = L.checkpoint_steps(20_000, 100)
    assert len(cps) == 100 and cps[0] == 200 and cps[-1] == 20_000


def test_nonprivate_sgd_reaches_small_excess():
    task = L.LogisticTask.make(10, 100_000, 1.0, seed=0)
    oracle = L.RiskOracle(10, 1.0, n_eval=200_000)
    res = L.private_sgd(task, math.inf, L.SGDSchedule(1.0), np.random.default_rng(0), oracle, checkpoints=20)
    assert res.excess_avg[-1] < 0.01
    assert not res.diverged


def test_nonprivate_excess_decreases_over_windows():
    tasks = [L.LogisticTask.make(10, 20_000, 2.0, seed=s) for s in range(8)]
    oracle = L.RiskOracle(10, 2.0, n_eval=100_000)
    rngs = [np.random.default_rng(s) for s in range(8)]
    res = L.sgd_batch(tasks, math.inf, L.SGDSchedule(1.0), rngs, oracle, checkpoints=50)
    curve = np.median(res.excess_avg, axis=0)
    smooth = np.convolve(curve, np.ones(5) / 5, mode="valid")
    windows = smooth[::5]
    assert np.all(np.diff(windows) <= 0)


def test_batch_equals_single_runs():
    tasks = [L.LogisticTask.make(6, 3000, 2.0, seed=s) for s in range(3)]
    sched = L.SGDSchedule(0.5)
    batch = L.sgd_batch(tasks, 8.0, sched, [np.random.default_rng(s) for s in range(3)])
    for i, t in enumerate(tasks):
        one = L.private_sgd(t, 8.0, sched, np.random.default_rng(i), checkpoints=100)
        np.testing.assert_allclose(batch.theta_bar[i], one.theta_bar, rtol=1e-12)


def test_private_gradient_unbiased():
    rng = np.random.default_rng(4)
    d = 10
    theta = rng.standard_normal(d)
    x = rng.standard_normal(d)
    x /= np.linalg.norm(x)
    g = L.grad(theta, x, 1.0)
    mech = Sp.build_logistic_split(20.0, d, L.R_MAX)
    n = 100_000
    z = Sp.privatize(np.tile(g, (n, 1)), mech, rng)
    se = z.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(z.mean(axis=0) - g) <= 4 * se)


def test_private_sgd_rejects_bad_eps():
    task = L.LogisticTask.make(5, 100, 1.0)
    with pytest.raises(ValueError):
        L.private_sgd(task, 0.0, L.SGDSchedule(1.0), np.random.default_rng(0))


def test_divergence_is_flagged():
    task = L.LogisticTask.make(5, 2000, 1.0)
    res = L.private_sgd(task, 0.01, L.SGDSchedule(1e9), np.random.default_rng(0), checkpoints=10)
    assert res.diverged and np.all(np.isnan(res.theta_bar))


def test_suite_config_collects_all_problems():
    with pytest.raises(ValueError) as err:
        L.SuiteConfig(d=2, reps=0, beta=1.0)
    msg = str(err.value)
    assert "d must" in msg and "reps" in msg and "beta" in msg


def test_small_suite_and_csvs(tmp_path):
    cfg = L.SuiteConfig(d=8, N=1000, eps_grid=(4.0, math.inf), reps=2, n_eval=20_000, checkpoints=10, workers=2)
    results, oracle = L.run_experiment_suite(cfg)
    again, _ = L.run_experiment_suite(L.SuiteConfig(**{**cfg.__dict__, "workers": 1}))
    for e in cfg.eps_grid:
        np.testing.assert_array_equal(results[e].excess_last, again[e].excess_last)
    paths = L.write_suite_csvs(results, oracle, tmp_path, L.suite_tasks(cfg))
    rows = list(csv.DictReader(open(paths["trajectories"])))
    assert len(rows) == 2 * 2 * 10
    summary = list(csv.DictReader(open(paths["summary"])))
    assert [r["which"] for r in summary] == ["avg", "last"] * 2
    assert float(summary[0]["zero_model_excess"]) == pytest.approx(oracle.zero_excess)
    finals = list(csv.DictReader(open(paths["finals"])))
    assert all(math.isfinite(float(r["param_error_avg"])) for r in finals)


def test_covariance_helper_small():
    task = L.LogisticTask.make(4, 2000, 1.0)
    cov, tr, bad = L.empirical_asymptotic_covariance(task, math.inf, 20)
    assert cov.shape == (4, 4) and tr > 0 and bad == 0
    with pytest.raises(ValueError):
        L.empirical_asymptotic_covariance(L.LogisticTask.make(30, 10, 1.0), 1.0, 2)
