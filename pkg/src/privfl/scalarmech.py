"""Private release of a bounded nonnegative scalar.

ScalarDP rounds k r / r_max to a neighbouring integer without bias, passes
the integer through (k+1)-ary randomized response, and debiases. ScalarRelDP
does the same on a geometric grid alpha * nu^j so the error is relative to
max(r, alpha) rather than to r_max.
"""

import math
from dataclasses import dataclass

import numpy as np


def default_levels(eps, rule="eps/3"):
    """k = ceil(e^{eps/3}); rule "2eps/3" gives ceil(e^{2 eps/3})."""
    scale = {"eps/3": 1.0 / 3.0, "2eps/3": 2.0 / 3.0}[rule]
    return max(1, math.ceil(math.exp(eps * scale)))


def _keep_prob(eps, k):
    # e^eps / (e^eps + k) without overflowing e^eps
    return 1.0 / (1.0 + k * math.exp(-eps))


def rr_privacy_ratio(k, eps):
    """Log ratio of the keep and switch probabilities of the response kernel."""
    if k < 1:
        raise ValueError("k must be at least 1")
    log_keep = -math.log1p(k * math.exp(-eps))
    log_switch = -eps - math.log1p(k * math.exp(-eps))
    return log_keep - log_switch


def draw_response_noise(shape, k, rng):
    """(keep uniforms, replacement index in {0..k-1}) for randomized_response."""
    keep_u = rng.random(shape)
    s = rng.integers(0, k, size=shape) if k > 0 else np.zeros(shape, int)
    return keep_u, s


def apply_response(j, k, eps, noise):
    keep_u, s = noise
    other = np.where(s < j, s, s + 1)
    return np.where(keep_u < _keep_prob(eps, k), j, other)


def randomized_response(j, k, eps, rng):
    """Keep j in {0..k} w.p. e^eps/(e^eps+k), else a uniform other value."""
    j = np.asarray(j)
    return apply_response(j, k, eps, draw_response_noise(j.shape, k, rng))


@dataclass(frozen=True)
class ScalarDPParams:
    eps: float
    k: int
    r_max: float
    a: float
    b: float


def make_scalar_dp(eps, r_max, k=None, rule="eps/3"):
    if eps <= 0:
        raise ValueError("eps must be positive")
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    k = default_levels(eps, rule) if k is None else int(k)
    if k < 1:
        raise ValueError("k must be at least 1")
    em = math.exp(-eps)
    a = (1.0 + k * em) / -math.expm1(-eps) * r_max / k
    b = k * (k + 1) * em / (2.0 * (1.0 + k * em))
    return ScalarDPParams(eps=float(eps), k=k, r_max=float(r_max), a=a, b=b)


def _round_scaled(r, params):
    r = np.asarray(r, float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise ValueError("r must be nonnegative")
    x = params.k * np.minimum(r, params.r_max) / params.r_max
    lower = np.floor(x)
    return lower, x - lower


def draw_scalar_noise(shape, params, rng):
    """Rounding uniforms plus response noise; independent of r."""
    round_u = rng.random(shape)
    return (round_u,) + draw_response_noise(shape, params.k, rng)


def apply_scalar_noise(r, noise, params):
    lower, frac = _round_scaled(r, params)
    j = (lower + (noise[0] < frac)).astype(np.int64)
    jhat = apply_response(j, params.k, params.eps, noise[1:])
    return params.a * (jhat - params.b)


def scalar_dp(r, params, rng):
    """Unbiased eps-DP estimate of min(r, r_max)."""
    r = np.asarray(r, float)
    z = apply_scalar_noise(r, draw_scalar_noise(r.shape, params, rng), params)
    return z[()] if z.ndim == 0 else z


def _rr_matrix(k, eps):
    keep = _keep_prob(eps, k)
    other = (1.0 - keep) / k if k > 0 else 0.0
    mat = np.full((k + 1, k + 1), other)
    np.fill_diagonal(mat, keep)
    return mat


def output_distribution(r, params):
    """Support and probabilities of scalar_dp(r); r is a scalar."""
    lower, frac = _round_scaled(float(r), params)
    lower = int(lower)
    pj = np.zeros(params.k + 1)
    pj[lower] += 1.0 - frac
    if frac > 0:
        pj[lower + 1] += frac
    probs = pj @ _rr_matrix(params.k, params.eps)
    values = params.a * (np.arange(params.k + 1) - params.b)
    return values, probs


def variance_bound(r, params):
    """Closed-form upper bound on Var(scalar_dp(r))."""
    k, rm = params.k, params.r_max
    em1 = math.expm1(params.eps)
    ek = math.exp(params.eps) + k
    inner = r * r + rm * rm / (4 * k * k) + (2 * k + 1) * ek * rm * rm / (6 * k * em1)
    return (k + 1) / em1 * inner + rm * rm / (4 * k * k)


@dataclass(frozen=True)
class ScalarRelDPParams:
    eps: float
    k: int
    alpha: float
    nu: float
    r_max: float
    a: float
    b: float

    def level_values(self):
        """alpha * nu^j for j >= 1 and 0 for j = 0."""
        v = self.alpha * self.nu ** np.arange(self.k + 1, dtype=float)
        v[0] = 0.0
        return v


def make_scalar_rel_dp(eps, alpha, nu, r_max, k=None):
    if eps <= 0 or alpha <= 0 or r_max <= 0:
        raise ValueError("eps, alpha and r_max must be positive")
    if nu <= 1:
        raise ValueError("nu must exceed 1")
    if k is None:
        k = max(1, math.ceil(math.log(r_max / alpha) / math.log(nu) - 1e-12))
    k = int(k)
    if alpha * nu ** k < r_max * (1 - 1e-12):
        raise ValueError("alpha * nu^k must reach r_max")
    em = math.exp(-eps)
    a = alpha * (1.0 + k * em) / -math.expm1(-eps)
    b = sum(nu ** j for j in range(1, k + 1)) * em / (1.0 + k * em)
    return ScalarRelDPParams(eps=float(eps), k=k, alpha=float(alpha), nu=float(nu),
                             r_max=float(r_max), a=a, b=b)


def _rel_rounding(r, params):
    # returns (lower index, probability of moving one level up)
    r = np.asarray(r, float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise ValueError("r must be nonnegative")
    r = np.minimum(r, params.r_max)
    al, nu = params.alpha, params.nu
    first = r <= nu * al
    with np.errstate(divide="ignore"):
        i = np.floor(np.log(np.maximum(r, al) / al) / math.log(nu))
    i = np.clip(i, 1, params.k - 1)
    # repair rounding in the logarithm so that nu^i alpha <= r < nu^(i+1) alpha
    i = np.where(al * nu ** i > r, i - 1, i)
    i = np.where((al * nu ** (i + 1) <= r) & (i + 1 <= params.k - 1), i + 1, i)
    i = np.maximum(i, 1)
    lo_val = al * nu ** i
    up = (r - lo_val) / (lo_val * (nu - 1.0))
    lower = np.where(first, 0, i).astype(np.int64)
    up = np.where(first, r / (nu * al), np.clip(up, 0.0, 1.0))
    return lower, up


def scalar_rel_dp(r, params, rng):
    """Unbiased eps-DP estimate of r with error relative to max(r, alpha)."""
    lower, up = _rel_rounding(r, params)
    j = lower + (rng.random(lower.shape) < up)
    jhat = randomized_response(j, params.k, params.eps, rng)
    z = params.a * (params.level_values()[jhat] / params.alpha - params.b)
    return z[()] if z.ndim == 0 else z


def rel_output_distribution(r, params):
    lower, up = _rel_rounding(float(r), params)
    lower, up = int(lower), float(up)
    pj = np.zeros(params.k + 1)
    pj[lower] += 1.0 - up
    if up > 0:
        pj[lower + 1] += up
    probs = pj @ _rr_matrix(params.k, params.eps)
    values = params.a * (params.level_values() / params.alpha - params.b)
    return values, probs


def relative_mse_bound(params):
    """Closed-form bound on E[(Z - r)^2] / max(r, alpha)^2."""
    k, nu, eps = params.k, params.nu, params.eps
    em1 = math.expm1(eps)
    ek = math.exp(eps) + k
    geo = (1 - nu ** (-2 * k)) / (1 - nu ** -2)
    return (k + 1) / em1 * nu * nu + nu ** (2 * k) * ek / em1 ** 2 * geo + (nu - 1) ** 2
