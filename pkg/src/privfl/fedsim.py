"""Federated training loop with local privatization and central noise.

Each round every client joins independently with probability q, computes a
local update from the shared model, privatizes the scaled difference
(theta_i - theta0) / eta_local on its own device, and the server adds

    theta += eta / (q N) * (sum_i clip_rho(Z_i) + N(0, sigma^2 I)).

Randomness is keyed by (master seed, round, role, client) so a run gives the
same bits whatever the number of worker threads.
"""

import csv
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import separated
from .accountant import AccountantState

METRIC_FIELDS = ("round", "epsilon_local", "sigma", "loss", "excess_risk", "param_error", "wallclock_ms")

_TAG_SAMPLING, _TAG_NOISE, _TAG_CLIENT = 0, 1, 2


class PassThrough:
    """Identity "mechanism" for non-private baselines; certifies nothing."""

    eps_total = math.inf

    def __repr__(self):
        return "PassThrough()"


@dataclass(frozen=True)
class PrivatizedUpdate:
    """A client update that has been through the local mechanism.

    The server only accepts this type, so raw updates cannot reach the sum.
    """
    vector: np.ndarray
    eps_local: float
    client: int = -1


def privatize_update(delta, mech, rng, client=-1):
    if isinstance(mech, PassThrough):
        z = np.array(delta, float)
    else:
        z = separated.privatize(delta, mech, rng)
    return PrivatizedUpdate(vector=z, eps_local=mech.eps_total, client=client)


@dataclass(frozen=True)
class FedRoundConfig:
    N: int
    q: float
    local_steps: int = 1
    eta_local: float = 1.0
    eta_server: float = 1.0
    rho: float = 1.0
    sigma: float = 0.0
    update_rule: str = "gradient"
    mech: object = field(default_factory=PassThrough)
    normalize_by: str = "expected"
    prox_inner_step: float = None

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.update_rule not in ("gradient", "prox_point"):
            raise ValueError(f"unknown update rule {self.update_rule!r}")
        if self.normalize_by not in ("expected", "realized"):
            raise ValueError(f"unknown normalization {self.normalize_by!r}")


@dataclass(frozen=True)
class ModelState:
    theta: np.ndarray
    round: int = 0
    seed: int = 0


class QuadraticLoss:
    """l(theta; x) = |theta - x|^2 / 2; shards are arrays of points x."""

    def value(self, theta, shard):
        x = np.asarray(shard)
        return 0.5 * float(np.mean(np.sum((theta - x) ** 2, axis=-1)))

    def grad(self, theta, shard):
        return theta - np.mean(np.atleast_2d(shard), axis=0)

    def prox(self, theta0, shard, eta):
        """Exact argmin of mean loss + |theta - theta0|^2 / (2 eta)."""
        xbar = np.mean(np.atleast_2d(shard), axis=0)
        return (eta * xbar + theta0) / (1.0 + eta)


def local_update(shard, theta0, cfg, loss, client=-1):
    """Scaled local difference (theta_i - theta0) / eta_local."""
    eta = cfg.eta_local
    if cfg.update_rule == "gradient":
        theta = np.array(theta0, float)
        for _ in range(cfg.local_steps):
            theta = theta - eta * loss.grad(theta, shard)
    else:
        # gradient steps on mean loss + |theta - theta0|^2 / (2 eta); the
        # default step eta/(1+eta) contracts for any 1-smooth loss
        step = cfg.prox_inner_step or eta / (1.0 + eta)
        theta = np.array(theta0, float)
        for _ in range(cfg.local_steps):
            theta = theta - step * (loss.grad(theta, shard) + (theta - theta0) / eta)
    delta = (theta - theta0) / eta
    if not np.all(np.isfinite(delta)):
        raise FloatingPointError(f"non-finite local update from client {client}")
    return delta


def clip(v, rho):
    """min(rho / |v|, 1) * v."""
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if n <= rho:
        return v.copy()
    return v * (rho / n)


def aggregate_round(model, updates, cfg, rng, batch_size=None):
    """Server step; updates must be PrivatizedUpdate instances."""
    for u in updates:
        if not isinstance(u, PrivatizedUpdate):
            raise TypeError("aggregate_round only accepts PrivatizedUpdate values")
    if not updates:
        warnings.warn("empty batch; model left unchanged", RuntimeWarning, stacklevel=2)
        return replace(model, round=model.round + 1)
    total = np.zeros_like(model.theta, dtype=float)
    for u in updates:
        total += clip(u.vector, cfg.rho)
    if cfg.sigma > 0:
        total += cfg.sigma * rng.standard_normal(total.shape)
    if cfg.normalize_by == "realized":
        denom = batch_size if batch_size is not None else len(updates)
    else:
        denom = cfg.q * cfg.N
    theta = model.theta + cfg.eta_server / denom * total
    return ModelState(theta=theta, round=model.round + 1, seed=model.seed)


def stream(seed, *key):
    """Independent generator for a (round, role, client) key."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def run(rounds, cfg, data_source, seed, loss, theta0, workers=1, evaluate=None, theta_star=None,
        record_wallclock=True):
    """Run the loop; returns (trajectory, metrics, accountant).

    data_source(i) or data_source[i] gives client i's shard. evaluate(theta),
    if given, returns (loss, excess_risk) for the metrics rows. With
    record_wallclock=False the timing column is nan, so reruns are byte-identical.
    """
    get = data_source if callable(data_source) else data_source.__getitem__
    model = ModelState(theta=np.array(theta0, float), round=0, seed=seed)
    trajectory = [model]
    metrics = []
    acct = None
    if cfg.sigma > 0 and cfg.q < 1:
        acct = AccountantState(q=cfg.q, rho=cfg.rho, sigma=cfg.sigma)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def client_job(args):
        r, i, theta = args
        rng = stream(seed, r, _TAG_CLIENT, i)
        delta = local_update(get(i), theta, cfg, loss, client=i)
        return privatize_update(delta, cfg.mech, rng, client=i)

    try:
        for r in range(rounds):
            start = time.perf_counter()
            chosen = np.nonzero(stream(seed, r, _TAG_SAMPLING).random(cfg.N) < cfg.q)[0]
            jobs = [(r, int(i), model.theta) for i in chosen]
            updates = list(pool.map(client_job, jobs)) if pool else [client_job(j) for j in jobs]
            if updates:
                model = aggregate_round(model, updates, cfg, stream(seed, r, _TAG_NOISE), len(chosen))
            else:
                model = replace(model, round=model.round + 1)
            if acct is not None:
                acct.step()
            trajectory.append(model)
            lval, excess = evaluate(model.theta) if evaluate else (math.nan, math.nan)
            perr = float(np.linalg.norm(model.theta - theta_star)) if theta_star is not None else math.nan
            metrics.append({
                "round": model.round,
                "epsilon_local": cfg.mech.eps_total,
                "sigma": cfg.sigma,
                "loss": lval,
                "excess_risk": excess,
                "param_error": perr,
                "wallclock_ms": 1000.0 * (time.perf_counter() - start) if record_wallclock else math.nan,
            })
    finally:
        if pool:
            pool.shutdown()
    return trajectory, metrics, acct


def fmt(x):
    """17 significant digits, the CSV number format."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_metrics_csv(path, metrics, fields=METRIC_FIELDS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for row in metrics:
            w.writerow([fmt(row[f]) for f in fields])


def make_quadratic_problem(n_clients, per_client, d, seed, spread=1.0):
    """Synthetic shards for QuadraticLoss: client i holds per_client points
    around a client-specific centre. Returns (shards, theta_star, evaluate)."""
    rng = np.random.default_rng([seed, 5])
    centres = rng.standard_normal((n_clients, d)) * spread / math.sqrt(d)
    shards = centres[:, None, :] + rng.standard_normal((n_clients, per_client, d)) / math.sqrt(d)
    pooled = shards.reshape(-1, d)
    theta_star = pooled.mean(axis=0)
    loss = QuadraticLoss()
    floor = loss.value(theta_star, pooled)

    def evaluate(theta):
        v = loss.value(theta, pooled)
        return v, v - floor

    return shards, theta_star, evaluate
