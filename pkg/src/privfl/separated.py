"""Separated release of a vector as (direction, magnitude).

M(w) = PrivUnit(w / |w|) * ScalarDP(|w|). The two halves are independent, so
the release is unbiased for w whenever |w| <= r_max and the certified budget
is the sum of the two halves.

Split rules
    theory      gamma(eps1), p = 1/2, k = ceil(e^{eps2/3})
    experiment  gamma(0.99 eps1), p(0.01 eps1), k = ceil(e^{eps2/3})
    logistic    gamma(13 eps/16), p(eps/16), magnitude eps/8
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import privunit, privunit_inf, scalarmech


class SplitRule(str, Enum):
    THEORY = "theory"
    EXPERIMENT = "experiment"
    LOGISTIC = "logistic"
    CUSTOM = "custom"


@dataclass(frozen=True)
class SeparatedMechanism:
    direction_params: object
    magnitude_params: object
    eps_direction: float
    eps_magnitude: float
    split_rule: SplitRule = SplitRule.CUSTOM

    @property
    def eps_total(self):
        return self.eps_direction + self.eps_magnitude

    @property
    def d(self):
        return self.direction_params.d

    @property
    def r_max(self):
        return self.magnitude_params.r_max

    @property
    def uses_linf(self):
        return isinstance(self.direction_params, privunit_inf.PrivUnitInftyParams)


def build_theory(eps1, eps2, d, r_max, k_rule="eps/3"):
    gamma = privunit.solve_gamma(eps1, d)
    direction = privunit.make_params(d, gamma, 0.5, eps_direction=eps1)
    magnitude = scalarmech.make_scalar_dp(eps2, r_max, rule=k_rule)
    return SeparatedMechanism(direction, magnitude, eps1, eps2, SplitRule.THEORY)


def build_experiment(eps1, eps2, d, r_max, k_rule="eps/3"):
    direction = privunit.params_for_eps(0.99 * eps1, 0.01 * eps1, d)
    magnitude = scalarmech.make_scalar_dp(eps2, r_max, rule=k_rule)
    return SeparatedMechanism(direction, magnitude, eps1, eps2, SplitRule.EXPERIMENT)


def build_logistic_split(eps, d, r_max, k_rule="eps/3"):
    direction = privunit.params_for_eps(13.0 * eps / 16.0, eps / 16.0, d)
    magnitude = scalarmech.make_scalar_dp(eps / 8.0, r_max, rule=k_rule)
    return SeparatedMechanism(direction, magnitude, 7.0 * eps / 8.0, eps / 8.0, SplitRule.LOGISTIC)


def build_linf(eps1, eps2, d, r_max, eps0=0.0, k_rule="eps/3"):
    """l-infinity variant: PrivUnitInfty on w/|w|_inf and ScalarDP on |w|_inf."""
    direction = privunit_inf.params_for_eps_inf(eps1, eps0, d)
    magnitude = scalarmech.make_scalar_dp(eps2, r_max, rule=k_rule)
    return SeparatedMechanism(direction, magnitude, eps1 + eps0, eps2, SplitRule.CUSTOM)


def certified_eps(mech):
    """Sum of the certificates computed from each half's own parameters."""
    if mech.uses_linf:
        direction = privunit_inf.verify_privacy_ratio_inf(mech.direction_params)
    else:
        direction = privunit.verify_privacy_ratio(mech.direction_params)
    mp = mech.magnitude_params
    return direction + scalarmech.rr_privacy_ratio(mp.k, mp.eps)


def _uniform_directions(n, d, rng):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _check_finite(w):
    w = np.atleast_2d(np.asarray(w, float))
    if not np.all(np.isfinite(w)):
        raise ValueError("input contains non-finite values")
    return w


def _split(w, fresh, uses_linf):
    ord_ = np.inf if uses_linf else 2
    mag = np.linalg.norm(w, ord=ord_, axis=1)
    zero = mag < 1e-12
    u = np.empty_like(w)
    u[~zero] = w[~zero] / mag[~zero, None]
    if zero.any():
        f = fresh(int(zero.sum())) if callable(fresh) else fresh[zero]
        if uses_linf:
            f = np.clip(f / np.abs(f).max(axis=1, keepdims=True), -1.0, 1.0)
        u[zero] = f
        mag = np.where(zero, 0.0, mag)
    return u, mag


def split_vector(w, mech, rng):
    """Rows of w as (directions, magnitudes); zero rows get a fresh random direction."""
    w = _check_finite(w)
    return _split(w, lambda n: _uniform_directions(n, w.shape[1], rng), mech.uses_linf)


def draw_noise(mech, n, rng):
    """All randomness for n releases, drawn before the data is seen (l2 only).

    Includes a uniform direction per row, used only if that row is zero.
    """
    if mech.uses_linf:
        raise ValueError("pre-drawn noise is only supported for the l2 mechanism")
    fresh = _uniform_directions(n, mech.d, rng)
    return (fresh, privunit.draw_noise(mech.direction_params, n, rng),
            scalarmech.draw_scalar_noise((n,), mech.magnitude_params, rng))


def apply_noise(w, noise, mech):
    """Releases for the rows of w from noise = draw_noise(mech, len(w), rng)."""
    w = _check_finite(w)
    fresh, dnoise, snoise = noise
    u, mag = _split(w, fresh, False)
    z1 = privunit.apply_noise(u, dnoise, mech.direction_params)
    z2 = scalarmech.apply_scalar_noise(mag, snoise, mech.magnitude_params)
    return z1 * z2[:, None]


def privatize(w, mech, rng):
    """Unbiased private release of w (shape (d,) or (n, d))."""
    w = np.asarray(w, float)
    single = w.ndim == 1
    if mech.uses_linf:
        u, mag = split_vector(w, mech, rng)
        z1 = np.atleast_2d(privunit_inf.sample_inf(u, mech.direction_params, rng))
        z2 = np.atleast_1d(scalarmech.scalar_dp(mag, mech.magnitude_params, rng))
        z = z1 * z2[:, None]
    else:
        w2 = _check_finite(w)
        z = apply_noise(w2, draw_noise(mech, w2.shape[0], rng), mech)
    return z[0] if single else z


def second_moment_trace(r, mech):
    """E|Z|^2 at |w| = r, exact: E[Z2^2] / m^2 (the direction norm is fixed)."""
    values, probs = scalarmech.output_distribution(r, mech.magnitude_params)
    norm2 = 1.0 / mech.direction_params.m ** 2
    if mech.uses_linf:
        norm2 *= mech.d
    return float(probs @ values ** 2) * norm2


def second_moment_reference(r, mech):
    """d / min(eps1, eps1^2) * (r^2 + r_max^2 e^{-2 eps2/3}).

    E|Z|^2 should stay within a fixed multiple of this across budgets.
    """
    e1 = mech.eps_direction
    tail = mech.r_max ** 2 * math.exp(-2.0 * mech.eps_magnitude / 3.0)
    return mech.d / min(e1, e1 * e1) * (r * r + tail)
