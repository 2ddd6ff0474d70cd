"""Hypercube-cap release of vectors in the l-infinity ball (PrivUnitInfty).

Each coordinate of u in [-1, 1]^d is rounded to a random corner u_hat of the
cube, then a corner V is drawn uniformly from {v : <v, u_hat> > kappa} with
probability p and from the complement otherwise. <v, u_hat> > kappa is the
same as v agreeing with u_hat on at least dtau = ceil((d + kappa + 1) / 2)
coordinates, so only the integer dtau is ever used.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import specfn
from .privunit import InvalidParams, cap_prob_for_eps0


class NoFeasibleKappa(ValueError):
    """No kappa >= 0 certifies the requested budget (even d, tiny eps)."""


def match_threshold(d, kappa):
    """d * tau, the minimum number of agreeing coordinates in the cap."""
    return (d + kappa + 2) // 2


def kappa_log_ratio(d, kappa):
    """ln sum_{l < dtau} C(d, l) - ln sum_{l >= dtau} C(d, l)."""
    k = match_threshold(d, kappa)
    return specfn.log_binom_tail(d, 0, k - 1) - specfn.log_binom_tail(d, k, d)


def solve_kappa(eps, d):
    """Largest kappa in {0, ..., d-1} whose exact binomial ratio is <= eps."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    d = int(d)
    if d < 1:
        raise ValueError("d must be at least 1")
    if kappa_log_ratio(d, 0) > eps:
        raise NoFeasibleKappa(f"no kappa certifies eps={eps} at d={d}")
    lo, hi = 0, d - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if kappa_log_ratio(d, mid) <= eps:
            lo = mid
        else:
            hi = mid - 1
    return lo


def approx_eps_small_kappa(d, kappa):
    """Closed-form budget bound for 0 <= kappa < sqrt(3d/2 + 1)."""
    s = kappa * math.sqrt(2.0 / (3 * d + 2))
    if s >= 1:
        return math.inf
    return math.log1p(s) - math.log1p(-s)


def approx_eps_large_kappa(d, kappa):
    """Closed-form budget bound using kappa + 2, for larger kappa."""
    k2 = kappa + 2
    r = k2 / d
    if r >= 1:
        return math.inf
    ent = (1 + r) * math.log1p(r) + (1 - r) * math.log1p(-r)
    return 0.5 * math.log(2.0) + 0.5 * math.log(d - k2 * k2 / d) + 0.5 * d * ent


def _log_kappa_plus_minus(d, kappa):
    k = match_threshold(d, kappa)
    lc = float(specfn.log_binom(d - 1, k - 1))
    return lc - specfn.log_binom_tail(d, k, d), lc - specfn.log_binom_tail(d, 0, k - 1)


def norm_constant_inf(d, kappa, p):
    """m = p C(d-1, dtau-1) / S_cap - (1-p) C(d-1, dtau-1) / S_rest."""
    if not 0 <= p <= 1:
        raise InvalidParams(f"p must lie in [0, 1], got {p}")
    lp, lm = _log_kappa_plus_minus(d, kappa)
    pos = math.log(p) + lp if p > 0 else -math.inf
    neg = math.log1p(-p) + lm if p < 1 else -math.inf
    if not pos > neg:
        raise InvalidParams(f"norm constant is not positive (d={d}, kappa={kappa}, p={p})")
    return math.exp(pos) * -math.expm1(neg - pos)


@dataclass(frozen=True)
class PrivUnitInftyParams:
    d: int
    kappa: int
    p: float
    tau: float
    m: float
    eps_direction: float

    @property
    def threshold(self):
        return match_threshold(self.d, self.kappa)


def make_params_inf(d, kappa, p, eps_direction=None):
    d, kappa = int(d), int(kappa)
    if not 0 <= kappa <= d - 1:
        raise InvalidParams(f"kappa must lie in [0, d-1], got {kappa}")
    m = norm_constant_inf(d, kappa, p)
    if eps_direction is None:
        eps_direction = privacy_ratio_inf(d, kappa, p)
    return PrivUnitInftyParams(d=d, kappa=kappa, p=float(p), tau=match_threshold(d, kappa) / d,
                               m=m, eps_direction=float(eps_direction))


def params_for_eps_inf(eps_kappa, eps0, d):
    kappa = solve_kappa(eps_kappa, d)
    return make_params_inf(d, kappa, cap_prob_for_eps0(eps0), eps_direction=eps_kappa + eps0)


def privacy_ratio_inf(d, kappa, p):
    eps0 = math.log(p) - math.log1p(-p) if 0 < p < 1 else math.copysign(math.inf, p - 0.5)
    return eps0 + kappa_log_ratio(d, kappa)


def verify_privacy_ratio_inf(params):
    """eps0 + ln S_rest - ln S_cap, the worst-case log likelihood ratio."""
    return privacy_ratio_inf(params.d, params.kappa, params.p)


def _match_count_table(d, lo, hi):
    # cumulative distribution of the truncated Binomial(d, 1/2) on [lo, hi];
    # terms more than e^-50 below the largest one are dropped
    ls = np.arange(lo, hi + 1)
    lp = specfn.log_binom(d, ls)
    keep = lp > lp.max() - 50.0
    ls, lp = ls[keep], lp[keep]
    w = np.exp(lp - lp.max())
    cdf = np.cumsum(w)
    return ls, cdf / cdf[-1]


def sample_match_count(params, n, rng):
    """Draw (match count, cap indicator) pairs for n releases."""
    d, k = params.d, params.threshold
    in_cap = rng.random(n) < params.p
    u = rng.random(n)
    counts = np.empty(n, dtype=np.int64)
    for mask, lo, hi in ((in_cap, k, d), (~in_cap, 0, k - 1)):
        if mask.any():
            ls, cdf = _match_count_table(d, lo, hi)
            pos = np.searchsorted(cdf, u[mask], side="right")
            counts[mask] = ls[np.minimum(pos, len(ls) - 1)]
    return counts, in_cap


def round_to_corner(u, rng):
    """Random corner with P(+1) = (1 + u_j) / 2, so E[corner] = u."""
    return np.where(rng.random(u.shape) < (1.0 + u) / 2.0, 1.0, -1.0)


def _check_box(u):
    over = np.abs(u) - 1.0
    if np.any(over > 1e-6):
        raise ValueError("coordinates must lie in [-1, 1]")
    if np.any(over > 0):
        warnings.warn("coordinates clamped to [-1, 1]", RuntimeWarning, stacklevel=3)
        return np.clip(u, -1.0, 1.0)
    return u


def sample_inf(u, params, rng, n=None):
    """Privatize u in [-1, 1]^d; u may be (d,) or (rows, d)."""
    u = np.asarray(u, float)
    single = u.ndim == 1 and n is None
    u2 = _check_box(np.atleast_2d(u))
    if n is not None and u2.shape[0] == 1:
        u2 = np.broadcast_to(u2, (n, u2.shape[1]))
    rows, d = u2.shape
    if d != params.d:
        raise ValueError(f"expected dimension {params.d}, got {d}")
    corner = round_to_corner(u2, rng)
    counts, _ = sample_match_count(params, rows, rng)
    # a uniform random subset of size A agrees: rank random keys per row
    ranks = np.argsort(np.argsort(rng.random((rows, d)), axis=1), axis=1)
    agree = ranks < counts[:, None]
    z = np.where(agree, corner, -corner) / params.m
    return z[0] if single else z


def exact_mean_given_corner(corner, params):
    """E[V | u_hat] from the match-count distribution (no sampling)."""
    d, k = params.d, params.threshold
    ls = np.arange(d + 1)
    lb = specfn.log_binom(d, ls)
    lcap = specfn.log_binom_tail(d, k, d)
    lrest = specfn.log_binom_tail(d, 0, k - 1)
    w = np.where(ls >= k, params.p * np.exp(lb - lcap), (1 - params.p) * np.exp(lb - lrest))
    return np.asarray(corner, float) * float(np.sum(w * (2 * ls - d)) / d)
