"""Reconstruction-protection calculators.

An adversary who sees a private release tries to recover a target of the
data: a unit direction in R^k (accuracy measured by the inner product a), or
the set of words a user typed (precision / recall under a Zipf prior). These
functions bound the adversary's success probability, and the simulators give
the Monte Carlo values the bounds are checked against.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ReconSphereQuery:
    k: int
    a: float
    rho0: float = 0.0
    eps: float = 0.0

    def __post_init__(self):
        if self.k < 4:
            raise ValueError("target dimension k must be at least 4")
        if not 0.0 <= self.a <= 1.0:
            raise ValueError("accuracy a must lie in [0, 1]")
        if self.rho0 < 0:
            raise ValueError("rho0 must be nonnegative")


def _log1m_sq(a):
    with np.errstate(divide="ignore"):
        return math.log1p(-a) + math.log1p(a) if a < 1 else -math.inf


def breach_log_bounds(q):
    """Log of each applicable branch of the breach bound (None if it does not apply)."""
    base = q.eps + q.rho0
    lsq = _log1m_sq(q.a)
    near = base + 0.5 * q.k * lsq if q.a <= 1 / math.sqrt(2) else None
    far = None
    if q.a >= math.sqrt(2.0 / q.k) and q.a > 0:
        far = base + 0.5 * (q.k - 1) * lsq - math.log(2.0 * q.a * math.sqrt(q.k))
    return near, far


def breach_prob_sphere(q):
    """Upper bound on the chance of recovering the direction to accuracy a.

    The two branches overlap on [sqrt(2/k), 1/sqrt(2)]; both are valid
    there, so the smaller is returned. Clamped to 1.
    """
    vals = [v for v in breach_log_bounds(q) if v is not None]
    return min(1.0, math.exp(min(vals)))


def protection_factor(p0, eps):
    """Posterior success probability after an eps-DP release: min(1, e^eps p0)."""
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must lie in [0, 1]")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return min(1.0, math.exp(eps) * p0)


def simulate_cap_hits(k, a, n, rng, chunk=2_000_000):
    """Monte Carlo P(<V, v0> >= a) for V uniform on S^{k-1}.

    Only the first coordinate matters: V1 = g1 / sqrt(g1^2 + chi2_{k-1}).
    Returns (estimate, standard error).
    """
    hits = 0
    done = 0
    while done < n:
        size = min(chunk, n - done)
        g = rng.standard_normal(size)
        rest = rng.chisquare(k - 1, size)
        hits += int(np.count_nonzero(g / np.sqrt(g * g + rest) >= a))
        done += size
    p = hits / n
    return p, math.sqrt(p * (1 - p) / n)


@dataclass(frozen=True)
class ZipfQuery:
    d: int
    m: int
    gamma_pred: float
    p: float = 0.5
    r: float = 0.5

    def __post_init__(self):
        if self.gamma_pred < 2:
            raise ValueError("gamma_pred must be at least 2")
        if not 1 <= self.m <= self.d:
            raise ValueError("need 1 <= m <= d")


def _hinge(x):
    return max(x, 0.0)


def zipf_precision_bound(q, denominator="proof"):
    """Bound on P(precision >= p) for predictions of size gamma m.

    denominator="proof" uses 4 log(gamma) in the sub-Gaussian term (the
    weaker constant that the derivation supports); "statement" uses
    2 log(gamma).
    """
    factor = {"proof": 4.0, "statement": 2.0}[denominator]
    g = q.gamma_pred
    h = _hinge(q.p * g - 1.0 - math.log(g))
    if h == 0:
        return 1.0
    expo = min(h * h * q.m / (factor * math.log(g)), 0.75 * h * q.m)
    return math.exp(-expo)


def recall_margin(q):
    """tau(r, d, m, gamma) = r (1 + log(d/(m+1))) - 1 - log(gamma)."""
    return q.r * (1.0 + math.log(q.d / (q.m + 1.0))) - 1.0 - math.log(q.gamma_pred)


def zipf_recall_bound(q):
    """Bound on P(recall >= r) for predictions of size gamma m."""
    t = _hinge(recall_margin(q))
    if t == 0 or q.d <= q.m:
        return 1.0
    expo = min(t * t * q.m / (4.0 * (1.0 - q.r * q.r) * math.log(q.d / q.m)), 0.75 * t * q.m)
    return math.exp(-expo)


def recommended_gamma(p):
    """gamma = (2/p) log(1/p), floored at 2."""
    return max(2.0, 2.0 / p * math.log(1.0 / p))


def zipf_joint_bound(q, c):
    """max{exp(-c m log(1/p)), exp(-c m log(d/m))}; meaningful when
    r log(d/m) >= 2 log(1/p)."""
    return max(math.exp(-c * q.m * math.log(1.0 / q.p)), math.exp(-c * q.m * math.log(q.d / q.m)))


def joint_regime_holds(q):
    return q.r * math.log(q.d / q.m) >= 2.0 * math.log(1.0 / q.p)


def zipf_probabilities(d, m):
    j = np.arange(1, d + 1, dtype=float)
    return np.minimum(m / j, 1.0)


def simulate_zipf(q, trials, rng, chunk=None):
    """Draw X under the Zipf prior and score v = first ceil(gamma m) words.

    Returns a dict of estimated P(precision >= p), P(recall >= r) and
    P(both), each with its standard error.
    """
    d, m = q.d, q.m
    nv = min(d, math.ceil(q.gamma_pred * m))
    probs = zipf_probabilities(d, m)
    head, tail = probs[:nv], probs[nv:]
    if chunk is None:
        chunk = max(1, 20_000_000 // max(d, 1))
    prec = rec = both = 0
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        hit = np.count_nonzero(rng.random((size, nv)) < head, axis=1)
        if tail.size:
            extra = np.count_nonzero(rng.random((size, tail.size)) < tail, axis=1)
        else:
            extra = np.zeros(size, int)
        total = hit + extra
        pr = hit / nv >= q.p
        rc = hit / np.maximum(total, 1) >= q.r
        prec += int(pr.sum())
        rec += int(rc.sum())
        both += int((pr & rc).sum())
        done += size

    def est(c):
        p = c / trials
        return p, math.sqrt(p * (1 - p) / trials)

    return {"precision": est(prec), "recall": est(rec), "joint": est(both)}


def dominates(bound, estimate, stderr, slack=3.0):
    """True unless the estimate exceeds the bound by more than slack standard errors."""
    return estimate - slack * stderr <= bound


def simulate_privunit_breach(k, a, eps, n, rng, chunk=100_000):
    """End-to-end breach rate for a PrivUnit release of a uniform direction.

    The target u is uniform on S^{k-1}; the adversary sees Z = PrivUnit(u)
    (gamma from solve_gamma(eps, k), p = 1/2) and guesses Z / |Z|. A breach
    is <guess, u> >= a. Returns (estimate, standard error).
    """
    from . import privunit

    params = privunit.make_params(k, privunit.solve_gamma(eps, k), 0.5, eps_direction=eps)
    hits = 0
    done = 0
    while done < n:
        size = min(chunk, n - done)
        u = rng.standard_normal((size, k))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        z = privunit.sample(u, params, rng)
        guess = z / np.linalg.norm(z, axis=1, keepdims=True)
        hits += int(np.count_nonzero(np.einsum("ij,ij->i", guess, u) >= a))
        done += size
    p = hits / n
    return p, math.sqrt(p * (1 - p) / n)
