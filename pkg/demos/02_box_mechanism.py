"""The l-infinity variant: round to a hypercube corner, then flip signs.

The mechanism is unbiased exactly, which we check by summing over all 2^d
outputs rather than by sampling.
"""

import numpy as np

from privfl import privunit_inf

d = 10
for eps in (1.0, 3.0, 6.0):
    params = privunit_inf.params_for_eps_inf(eps, 0.5, d)
    print(f"eps {eps} + 0.5 for the cap probability: kappa {params.kappa}, m {params.m:.4f}, "
          f"certified ratio {privunit_inf.verify_privacy_ratio_inf(params):.3f} (limit {eps + 0.5})")

params = privunit_inf.params_for_eps_inf(3.0, 0.5, d)
corner = np.where(np.arange(d) % 3 == 0, 1.0, -1.0)
mean = privunit_inf.exact_mean_given_corner(corner, params) / params.m
print("exact mean / m at a corner:", np.round(mean, 12))

rng = np.random.default_rng(1)
u = rng.uniform(-1, 1, d)
z = privunit_inf.sample_inf(np.tile(u, (200_000, 1)), params, rng)
print("max |sample mean - u| over 2e5 draws:", float(np.abs(z.mean(axis=0) - u).max()))
