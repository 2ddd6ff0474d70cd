"""Central privacy accounting for the noisy aggregation loop.

Closed forms only: the order-2 Renyi bound for Bernoulli(q)-subsampled
Gaussian noise on clipped updates, its inversion for the noise scale, and
the generic Renyi <-> (eps, delta) conversions. A numerically optimized
moments accountant is deliberately not included.

Units: rho is the clipping radius of one update and sigma is the standard
deviation of the Gaussian added to the sum of clipped updates, both before
the common eta / (qN) factor. Only the ratio rho / sigma matters.
"""

import math
from dataclasses import dataclass, field

VALIDITY_QLAMBDA = 0.1


def renyi2_per_round(q, rho, sigma):
    """log(1 + q^2/(1-q) (exp(rho^2/sigma^2) - 1))."""
    if not 0 <= q < 1:
        raise ValueError("q must lie in [0, 1)")
    if sigma < 0 or rho < 0:
        raise ValueError("rho and sigma must be nonnegative")
    if rho == 0 or q == 0:
        return 0.0
    if sigma == 0:
        return math.inf
    x = (rho / sigma) ** 2
    if x > 700:
        # expm1 overflows; log(q^2/(1-q)) + x is exact to double precision
        return 2 * math.log(q) - math.log1p(-q) + x
    return math.log1p(q * q / (1 - q) * math.expm1(x))


def sigma_for_budget(T, q, rho, eps):
    """Smallest sigma with T * renyi2_per_round(q, rho, sigma) <= eps.

    Exact inversion: rho^2 / sigma^2 = log(1 + (e^{eps/T} - 1)(1 - q) / q^2).
    """
    if T <= 0 or eps <= 0 or rho <= 0 or not 0 < q < 1:
        raise ValueError("T, q, rho and eps must be positive, q < 1")
    ratio2 = math.log1p(math.expm1(eps / T) * (1 - q) / (q * q))
    return rho / math.sqrt(ratio2)


def sigma_linearized(T, q, rho, eps):
    """rho / sqrt(log(1 + eps (1-q) / (T q^2))), from the linearized bound.

    It replaces e^{eps/T} - 1 by eps/T, so it is never smaller than
    sigma_for_budget and spends slightly less than eps; the two agree as
    eps/T -> 0.
    """
    return rho / math.sqrt(math.log1p(eps * (1 - q) / (T * q * q)))


def sigma_approx(T, q, rho, eps):
    """sqrt(T q^2 rho^2 / eps), the small-q approximation."""
    return math.sqrt(T * q * q * rho * rho / eps)


def renyi_to_dp(eps_renyi, lam, delta):
    """(eps_renyi, lam)-Renyi DP implies (eps_renyi + log(1/delta)/(lam-1), delta)-DP."""
    if lam <= 1:
        raise ValueError("lambda must exceed 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return eps_renyi - math.log(delta) / (lam - 1)


def dp_to_renyi(eps, lam):
    """eps-DP implies (min(eps, 2 lam eps^2), lam)-Renyi DP."""
    if eps < 0 or lam < 1:
        raise ValueError("need eps >= 0 and lambda >= 1")
    return min(eps, 2 * lam * eps * eps)


def approximation_valid(q, lam=2.0):
    """The closed forms are asymptotic in q * lambda -> 0; flag q lambda > 0.1."""
    return q * lam <= VALIDITY_QLAMBDA


@dataclass
class AccountantState:
    q: float
    rho: float
    sigma: float
    lam: float = 2.0
    rounds_so_far: int = 0
    eps_renyi_total: float = 0.0
    history: list = field(default_factory=list)

    @property
    def valid(self):
        return approximation_valid(self.q, self.lam)

    def step(self, rounds=1):
        """Account for identical rounds; returns the new total."""
        # rounds are identical, so the total is a product rather than a
        # running sum and stays exactly additive
        cost = renyi2_per_round(self.q, self.rho, self.sigma)
        for _ in range(rounds):
            self.rounds_so_far += 1
            self.history.append(self.rounds_so_far * cost)
        self.eps_renyi_total = self.rounds_so_far * cost
        return self.eps_renyi_total

    def to_dp(self, delta):
        return renyi_to_dp(self.eps_renyi_total, self.lam, delta)
