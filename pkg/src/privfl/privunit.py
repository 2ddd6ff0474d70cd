"""Spherical-cap release of unit vectors (PrivUnit).

A unit vector u is released as V / m where V is drawn uniformly from the cap
{v : <v, u> >= gamma} with probability p and from its complement otherwise.
The norm constant m makes the release unbiased, so every output has the same
length 1/m.

The cap threshold gamma buys the direction budget, the cap probability p
buys an extra eps0 = log(p / (1 - p)); splitting a total budget between them
is left to the caller (see separated.py).
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import specfn

GAMMA_MAX = np.nextafter(1.0, 0.0)


class InvalidParams(ValueError):
    """Parameters for which the mechanism is degenerate or not certified."""


def _log1m_sq(gamma):
    # log(1 - gamma^2) that stays accurate for gamma close to 1
    return math.log1p(-gamma) + math.log1p(gamma)


def small_branch_gamma(eps, d):
    """Closed-form threshold tanh(eps/2) * sqrt(pi / (2(d-1)))."""
    return math.tanh(eps / 2.0) * math.sqrt(math.pi / (2.0 * (d - 1)))


def large_branch_slack(gamma, eps, d):
    """eps minus the large-threshold requirement; >= 0 means gamma is certified."""
    need = 0.5 * math.log(d) + math.log(6.0) - 0.5 * (d - 1) * _log1m_sq(gamma) + math.log(gamma)
    return eps - need


def large_branch_gamma(eps, d, tol=1e-12):
    """Largest gamma in [sqrt(2/d), 1) meeting the large-threshold condition.

    Returns None when even gamma = sqrt(2/d) fails it. Bisection on the
    residual, which is strictly decreasing in gamma.
    """
    lo = math.sqrt(2.0 / d)
    if lo >= 1.0 or large_branch_slack(lo, eps, d) < 0:
        return None
    hi = GAMMA_MAX
    if large_branch_slack(hi, eps, d) >= 0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if large_branch_slack(mid, eps, d) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def solve_gamma(eps, d):
    """Largest cap threshold certified for direction budget eps in dimension d."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if d < 2:
        raise ValueError("d must be at least 2")
    small = min(small_branch_gamma(eps, d), GAMMA_MAX)
    large = large_branch_gamma(eps, d)
    if large is None:
        return small
    return max(small, large)


def cap_prob_for_eps0(eps0):
    """p = e^eps0 / (1 + e^eps0)."""
    return 0.5 * (1.0 + math.tanh(eps0 / 2.0))


def _log_gamma_plus_minus(d, gamma):
    # log gamma_plus and log |gamma_minus|. The (1 - gamma^2)^alpha factor and
    # B(alpha, alpha) 2^(d-1) are combined through B(alpha, alpha) =
    # 2^(2 - d) B(alpha, 1/2) to avoid subtracting two numbers of size d.
    alpha = (d - 1) / 2.0
    common = alpha * _log1m_sq(gamma) - math.log(alpha) - math.log(2.0) - specfn.log_beta(alpha, 0.5)
    log_cap = specfn.sphere_cap_logprob(d, gamma)
    log_rest = specfn.sphere_cap_logprob_below(d, gamma)
    return common - log_cap, common - log_rest


def log_norm_constant(d, gamma, p):
    """log m; raises InvalidParams when m <= 0."""
    if not 0 <= gamma < 1:
        raise InvalidParams(f"gamma must lie in [0, 1), got {gamma}")
    if not 0 <= p <= 1:
        raise InvalidParams(f"p must lie in [0, 1], got {p}")
    lgp, lgm = _log_gamma_plus_minus(d, gamma)
    with np.errstate(divide="ignore"):
        pos = math.log(p) + lgp if p > 0 else -math.inf
        neg = math.log1p(-p) + lgm if p < 1 else -math.inf
    if not pos > neg:
        raise InvalidParams(f"norm constant is not positive (d={d}, gamma={gamma}, p={p})")
    return pos + math.log(-math.expm1(neg - pos))


def norm_constant(d, gamma, p):
    """m = p * gamma_plus + (1 - p) * gamma_minus."""
    return math.exp(log_norm_constant(d, gamma, p))


@dataclass(frozen=True)
class PrivUnitParams:
    d: int
    gamma: float
    p: float
    m: float
    eps_direction: float

    @property
    def alpha(self):
        return (self.d - 1) / 2.0

    @property
    def output_norm(self):
        return 1.0 / self.m


def make_params(d, gamma, p, eps_direction=None):
    """Build validated parameters; eps_direction defaults to the certified ratio."""
    d = int(d)
    if d < 2:
        raise InvalidParams("d must be at least 2")
    m = norm_constant(d, gamma, p)
    if eps_direction is None:
        eps_direction = privacy_ratio(d, gamma, p)
    return PrivUnitParams(d=d, gamma=float(gamma), p=float(p), m=m, eps_direction=float(eps_direction))


def params_for_eps(eps_gamma, eps0, d):
    """gamma certified for eps_gamma, p = e^eps0/(1+e^eps0); total eps_gamma + eps0."""
    gamma = solve_gamma(eps_gamma, d)
    return make_params(d, gamma, cap_prob_for_eps0(eps0), eps_direction=eps_gamma + eps0)


def privacy_ratio(d, gamma, p):
    with np.errstate(divide="ignore"):
        eps0 = math.log(p) - math.log1p(-p) if 0 < p < 1 else math.copysign(math.inf, p - 0.5)
    if gamma >= 1:
        return math.inf
    return eps0 + float(specfn.sphere_cap_logprob_below(d, gamma) - specfn.sphere_cap_logprob(d, gamma))


def verify_privacy_ratio(params):
    """Worst-case log likelihood ratio of the release.

    eps0 + ln P(<U,u> < gamma) - ln P(<U,u> >= gamma); compare it against
    the claimed budget, or use certifies().
    """
    return privacy_ratio(params.d, params.gamma, params.p)


def certifies(params, eps, tol=1e-9):
    return verify_privacy_ratio(params) <= eps + tol


def _check_unit(u):
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    off = np.abs(norms - 1.0)
    if np.any(off > 1e-6):
        raise ValueError("input must be a unit vector")
    if np.any(off > 1e-9):
        warnings.warn("input renormalized to unit length", RuntimeWarning, stacklevel=3)
        return u / norms
    return u


def sample_first_coordinate(params, n, rng):
    """Draw n values of T = <V, u> and the cap indicator.

    T = 2B - 1 with B ~ Beta(alpha, alpha) truncated to [tau, 1] on the cap
    branch and to [0, tau) otherwise, by inverse CDF on a rescaled uniform.
    The cap side is inverted through 1 - B so its tiny tail stays resolved.
    """
    a = params.alpha
    tau = (1.0 + params.gamma) / 2.0
    in_cap = rng.random(n) < params.p
    with np.errstate(divide="ignore"):
        logu = np.log(rng.random(n))
    t = np.empty(n)
    if in_cap.any():
        top = (1.0 - params.gamma) / 2.0
        ltop = specfn.reg_inc_beta(top, a, a)
        y = specfn.inv_log_reg_inc_beta(logu[in_cap] + ltop, a, a, hi=top)
        t[in_cap] = 1.0 - 2.0 * y
    rest = ~in_cap
    if rest.any():
        lt = specfn.reg_inc_beta(tau, a, a)
        b = specfn.inv_log_reg_inc_beta(logu[rest] + lt, a, a, hi=tau)
        # B may round up onto tau itself; keep it strictly below
        t[rest] = np.minimum(2.0 * b - 1.0, np.nextafter(params.gamma, -1.0))
    return t, in_cap


def reflect_from_e1(u, v):
    """Apply the Householder reflection that swaps e1 and u to rows of v."""
    w = -u.copy()
    w[..., 0] += 1.0
    wn2 = np.sum(w * w, axis=-1, keepdims=True)
    small = wn2 < 1e-24
    wn2 = np.where(small, 1.0, wn2)
    proj = np.sum(w * v, axis=-1, keepdims=True)
    return np.where(small, v, v - 2.0 * proj / wn2 * w)


def draw_noise(params, n, rng):
    """Data-independent randomness for n releases: (T, unit rows in R^{d-1}).

    The release is apply_noise(u, ...), so noise can be drawn ahead in bulk.
    """
    t, _ = sample_first_coordinate(params, n, rng)
    g = rng.standard_normal((n, params.d - 1))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return t, g


def apply_noise(u, noise, params):
    """Build V from (T, G) in the frame of e1 and rotate it onto u."""
    t, g = noise
    v = np.empty((t.shape[0], params.d))
    v[:, 0] = t
    v[:, 1:] = np.sqrt(np.maximum(0.0, 1.0 - t * t))[:, None] * g
    return reflect_from_e1(u, v) / params.m


def sample(u, params, rng, n=None):
    """Privatize unit vector(s) u; u may be (d,) or (n, d).

    With a single u and n given, returns n independent releases of it.
    """
    u = np.asarray(u, float)
    single = u.ndim == 1 and n is None
    u2 = _check_unit(np.atleast_2d(u))
    if n is not None and u2.shape[0] == 1:
        u2 = np.broadcast_to(u2, (n, u2.shape[1]))
    if u2.shape[1] != params.d:
        raise ValueError(f"expected dimension {params.d}, got {u2.shape[1]}")
    z = apply_noise(u2, draw_noise(params, u2.shape[0], rng), params)
    return z[0] if single else z
