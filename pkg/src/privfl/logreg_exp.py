"""Private SGD on simulated logistic regression.

Features are uniform on the unit sphere, labels follow
P(y = 1 | x) = sigmoid(<theta*, x>) with |theta*| = tau. Each run makes one
pass of single-sample SGD with steps eta0 * k^-beta, releasing every gradient
through the separated mechanism, and tracks both the last iterate and the
running (Polyak) average.

Repetitions are run side by side as rows of one array so the per-step cost
is a handful of numpy calls regardless of how many repetitions there are.
Mechanism noise is drawn ahead in chunks from a generator owned by each
repetition, so a repetition's result does not depend on which others share
its batch or on thread count (it does depend on the chunk size).
"""

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import separated

LN2 = math.log(2.0)
DIVERGENCE_NORM = 1e6
R_MAX = 1.0  # |grad| <= |x| = 1 for the logistic loss


def _seed_int(*key):
    return int(np.random.SeedSequence(list(key)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class LogisticTask:
    d: int
    N: int
    tau_signal: float
    theta_star: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        if abs(np.linalg.norm(self.theta_star) - self.tau_signal) > 1e-9:
            raise ValueError("|theta_star| must equal tau_signal")
        if len(self.theta_star) != self.d:
            raise ValueError("theta_star has the wrong dimension")

    @classmethod
    def make(cls, d, N, tau_signal, seed=0):
        """Task with theta* uniform on the sphere of radius tau (drawn from seed)."""
        g = np.random.default_rng([seed, 0]).standard_normal(d)
        return cls(d, N, float(tau_signal), tau_signal * g / np.linalg.norm(g), seed)

    def data_rng(self):
        return np.random.default_rng([self.seed, 1])


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, float)))


def softplus(z):
    return np.logaddexp(0.0, z)


def draw_examples(theta_star, n, rng):
    """n pairs (x, y): x uniform on the sphere, y = +-1 with P(y=1|x) = sigmoid(theta*.x)."""
    x = rng.standard_normal((n, len(theta_star)))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = np.where(rng.random(n) < sigmoid(x @ theta_star), 1.0, -1.0)
    return x, y


def generate(task, rng=None):
    """The task's N training pairs (from its own seed unless rng is given)."""
    return draw_examples(task.theta_star, task.N, task.data_rng() if rng is None else rng)


def loss(theta, x, y):
    return softplus(-y * (x @ theta))


def grad(theta, x, y):
    """Gradient of softplus(-y theta.x) in theta; rows of x give rows of the result."""
    y = np.asarray(y, float)
    margin = y * np.einsum("...i,...i->...", x, theta)
    return (-y * sigmoid(-margin))[..., None] * x


class RiskOracle:
    """Population risk by Monte Carlo with common random numbers.

    By rotation invariance only the projections of X onto e = theta*/tau and
    onto the unit direction f of theta's component orthogonal to e matter,
    and (e.X, f.X) has the same law for every such pair. So one fixed sample
    of two sphere coordinates serves every theta, and Y is summed out:
    E[l | x] = sigmoid(s) softplus(-t) + sigmoid(-s) softplus(t).
    """

    def __init__(self, d, tau, n_eval=10**6, seed=0):
        rng = np.random.default_rng([seed, 2])
        g = rng.standard_normal((2, n_eval))
        rest = rng.chisquare(d - 2, n_eval) if d > 2 else 0.0
        r = np.sqrt(g[0] ** 2 + g[1] ** 2 + rest)
        self.x1, self.x2 = g[0] / r, g[1] / r
        self.tau = tau
        self.n_eval = n_eval
        s = tau * self.x1
        self._p = sigmoid(s)
        self.risk_star = float(self._risk_ab(np.array([tau]), np.array([0.0]))[0])

    def _risk_ab(self, a, b, block=2**18):
        out = np.zeros(len(a))
        for lo in range(0, self.n_eval, block):
            x1, x2, p = self.x1[lo:lo + block], self.x2[lo:lo + block], self._p[lo:lo + block]
            t = a[:, None] * x1 + b[:, None] * x2
            out += np.sum(p * softplus(-t) + (1.0 - p) * softplus(t), axis=1)
        return out / self.n_eval

    def risk(self, theta, theta_star):
        """L(theta) for theta of shape (d,) or (n, d)."""
        theta = np.atleast_2d(theta)
        e = theta_star / np.linalg.norm(theta_star)
        a = theta @ e
        b = np.linalg.norm(theta - a[:, None] * e, axis=1)
        r = self._risk_ab(a, b)
        return r if r.size > 1 else float(r[0])

    def excess(self, theta, theta_star):
        return self.risk(theta, theta_star) - self.risk_star

    @property
    def zero_excess(self):
        """ln 2 - L(theta*): the excess risk of theta = 0."""
        return LN2 - self.risk_star


def population_risk(theta, task, n_eval=10**6, eval_seed=0):
    return RiskOracle(task.d, task.tau_signal, n_eval, eval_seed).risk(theta, task.theta_star)


@dataclass(frozen=True)
class SGDSchedule:
    eta0: float
    beta: float = 0.51

    def __post_init__(self):
        if not 0.5 < self.beta < 1:
            raise ValueError("beta must lie in (1/2, 1)")
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")

    @classmethod
    def for_eps(cls, eps, d, beta=0.51, eta0_nonprivate=1.0):
        """eta0 = sqrt(eps/d); the non-private run (eps = inf) uses eta0_nonprivate."""
        eta0 = eta0_nonprivate if math.isinf(eps) else math.sqrt(eps / d)
        return cls(eta0, beta)

    def steps(self, k):
        return self.eta0 * np.asarray(k, float) ** -self.beta


@dataclass
class SGDResult:
    eps: float
    theta_bar: np.ndarray
    theta_last: np.ndarray
    checkpoints: np.ndarray
    excess_avg: np.ndarray  # (reps, checkpoints)
    excess_last: np.ndarray
    diverged: np.ndarray


def checkpoint_steps(N, count=100):
    return np.unique(np.linspace(N / count, N, count).round().astype(int))


def _mechanism(eps, d):
    return None if math.isinf(eps) else separated.build_logistic_split(eps, d, R_MAX)


def _stack_noise(parts):
    # list over reps of nested tuples of (C, ...) arrays -> (C, reps, ...)
    if isinstance(parts[0], tuple):
        return tuple(_stack_noise([p[i] for p in parts]) for i in range(len(parts[0])))
    return np.stack(parts, axis=1)


def _take(noise, k):
    if isinstance(noise, tuple):
        return tuple(_take(n, k) for n in noise)
    return noise[k]


def sgd_batch(tasks, eps, schedule, noise_rngs, oracle=None, checkpoints=100, chunk=1024, mech=None):
    """Run private SGD for several tasks of equal (d, N) at once.

    Task i uses its own data stream and noise_rngs[i]. Excess risk is
    evaluated at the checkpoints when an oracle is given. mech overrides the
    default logistic split for eps.
    """
    d, N = tasks[0].d, tasks[0].N
    reps = len(tasks)
    if mech is None:
        mech = _mechanism(eps, d)
    stars = np.stack([t.theta_star for t in tasks])
    data_rngs = [t.data_rng() for t in tasks]
    theta = np.zeros((reps, d))
    total = np.zeros((reps, d))
    alive = np.ones(reps, bool)
    cps = checkpoint_steps(N, checkpoints)
    ex_avg = np.full((reps, len(cps)), np.nan)
    ex_last = np.full((reps, len(cps)), np.nan)
    ci = 0
    for start in range(0, N, chunk):
        c = min(chunk, N - start)
        batches = [draw_examples(t.theta_star, c, r) for t, r in zip(tasks, data_rngs)]
        xs = np.stack([b[0] for b in batches], axis=1)
        ys = np.stack([b[1] for b in batches], axis=1)
        if mech is not None:
            noise = _stack_noise([separated.draw_noise(mech, c, r) for r in noise_rngs])
        etas = schedule.steps(np.arange(start + 1, start + c + 1))
        for j in range(c):
            g = grad(theta, xs[j], ys[j])
            if mech is not None:
                g = separated.apply_noise(g, _take(noise, j), mech)
            theta -= etas[j] * g
            total += theta
            k = start + j + 1
            if ci < len(cps) and k == cps[ci]:
                blown = ~np.all(np.isfinite(theta), axis=1) | (np.linalg.norm(theta, axis=1) > DIVERGENCE_NORM)
                if blown.any():
                    alive &= ~blown
                    theta[blown] = 0.0
                    total[blown] = 0.0
                if oracle is not None:
                    for i in np.nonzero(alive)[0]:
                        pair = np.stack([total[i] / k, theta[i]])
                        ex_avg[i, ci], ex_last[i, ci] = oracle.excess(pair, stars[i])
                ci += 1
    theta_bar = total / N
    theta_bar[~alive] = np.nan
    theta[~alive] = np.nan
    return SGDResult(eps, theta_bar, theta, cps, ex_avg, ex_last, ~alive)


def private_sgd(task, eps, schedule, rng, oracle=None, checkpoints=100):
    """One pass of (private) SGD over the task's data; returns an SGDResult for one run."""
    if not (eps > 0):
        raise ValueError("eps must be positive or infinite")
    res = sgd_batch([task], eps, schedule, [rng], oracle, checkpoints)
    return replace(res, theta_bar=res.theta_bar[0], theta_last=res.theta_last[0],
                   excess_avg=res.excess_avg[0], excess_last=res.excess_last[0],
                   diverged=bool(res.diverged[0]))


@dataclass(frozen=True)
class SuiteConfig:
    d: int = 100
    N: int = 20_000
    tau_signal: float = 4.0
    eps_grid: tuple = (100 / 64, 100 / 16, 100 / 4, 100.0, math.inf)
    reps: int = 10
    seed: int = 0
    n_eval: int = 10**6
    eval_seed: int = 0
    beta: float = 0.51
    eta0_nonprivate: float = 4.0
    checkpoints: int = 100
    workers: int = 1

    def __post_init__(self):
        problems = []
        if self.d < 3:
            problems.append("d must be at least 3")
        if self.N < self.checkpoints:
            problems.append("N must be at least the number of checkpoints")
        if self.tau_signal <= 0:
            problems.append("tau_signal must be positive")
        if not self.eps_grid or any(not (e > 0) for e in self.eps_grid):
            problems.append("eps_grid entries must be positive (inf allowed)")
        if self.reps < 1:
            problems.append("reps must be at least 1")
        if not 0.5 < self.beta < 1:
            problems.append("beta must lie in (1/2, 1)")
        if problems:
            raise ValueError("; ".join(problems))


def suite_tasks(cfg):
    """Repetition r gets the same task (theta* and data) at every eps."""
    return [LogisticTask.make(cfg.d, cfg.N, cfg.tau_signal, _seed_int(cfg.seed, 0, r))
            for r in range(cfg.reps)]


def run_experiment_suite(cfg, oracle=None):
    """All (eps, repetition) runs; returns {eps: SGDResult} in grid order."""
    oracle = oracle or RiskOracle(cfg.d, cfg.tau_signal, cfg.n_eval, cfg.eval_seed)
    tasks = suite_tasks(cfg)

    def unit(ie):
        i, eps = ie
        rngs = [np.random.default_rng([cfg.seed, 1, i, r]) for r in range(cfg.reps)]
        sched = SGDSchedule.for_eps(eps, cfg.d, cfg.beta, cfg.eta0_nonprivate)
        return sgd_batch(tasks, eps, sched, rngs, oracle, cfg.checkpoints)

    jobs = list(enumerate(cfg.eps_grid))
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(unit, jobs))
    else:
        results = [unit(j) for j in jobs]
    return dict(zip(cfg.eps_grid, results)), oracle


def _fmt(x):
    return format(float(x), ".17g")


def write_suite_csvs(results, oracle, outdir, tasks=None):
    """trajectories.csv (one row per eps, rep, checkpoint), finals.csv, summary.csv."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}
    path = os.path.join(outdir, "trajectories.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("eps", "rep", "step", "excess_risk_avg", "excess_risk_last"))
        for eps, res in results.items():
            for r in range(res.excess_avg.shape[0]):
                for c, step in enumerate(res.checkpoints):
                    w.writerow((_fmt(eps), r, int(step), _fmt(res.excess_avg[r, c]), _fmt(res.excess_last[r, c])))
    paths["trajectories"] = path
    path = os.path.join(outdir, "finals.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("eps", "rep", "excess_risk_avg", "excess_risk_last", "param_error_avg", "diverged"))
        for eps, res in results.items():
            for r in range(res.excess_avg.shape[0]):
                err = math.nan
                if tasks is not None:
                    err = np.linalg.norm(res.theta_bar[r] - tasks[r].theta_star)
                w.writerow((_fmt(eps), r, _fmt(res.excess_avg[r, -1]), _fmt(res.excess_last[r, -1]),
                            _fmt(err), int(res.diverged[r])))
    paths["finals"] = path
    path = os.path.join(outdir, "summary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("eps", "which", "q10", "median", "q90", "zero_model_excess"))
        for eps, res in results.items():
            for which, arr in (("avg", res.excess_avg[:, -1]), ("last", res.excess_last[:, -1])):
                q = np.nanquantile(arr, [0.1, 0.5, 0.9]) if np.isfinite(arr).any() else [math.nan] * 3
                w.writerow((_fmt(eps), which, *(_fmt(v) for v in q), _fmt(oracle.zero_excess)))
    paths["summary"] = path
    return paths


def empirical_asymptotic_covariance(task, eps, repetitions, seed=0, eps_magnitude=None, eta0=1.0, beta=0.51):
    """Covariance of sqrt(N) (theta_bar - theta*) over repetitions sharing theta*.

    eps is the direction budget eps1; the magnitude gets eps_magnitude (the
    logistic split of eps when None). Every eps uses the same steps
    eta0 k^-beta, since the limit does not depend on them. Repetition r
    redraws the data and the noise. Returns (covariance, trace, diverged runs).
    """
    if task.d > 20:
        raise ValueError("intended for small d (<= 20)")
    mech = None
    if not math.isinf(eps) and eps_magnitude is not None:
        mech = separated.build_theory(eps, eps_magnitude, task.d, R_MAX)
    tasks = [replace(task, seed=_seed_int(seed, 3, r)) for r in range(repetitions)]
    rngs = [np.random.default_rng([seed, 4, r]) for r in range(repetitions)]
    res = sgd_batch(tasks, eps, SGDSchedule(eta0, beta), rngs, None, checkpoints=1, chunk=4096, mech=mech)
    dev = math.sqrt(task.N) * (res.theta_bar[~res.diverged] - task.theta_star)
    cov = np.cov(dev, rowvar=False)
    return cov, float(np.trace(cov)), int(res.diverged.sum())
