"""How likely is an adversary to recover a user's direction to within a cosine
of a? Compare the analytic bound with a simulated attack that simply reads the
direction off the release.
"""

import numpy as np

from privfl import reconguard

k = 64
print(" eps    a   simulated     bound")
for eps in (1.0, 10.0, 32.0):
    for a in (0.3, 0.5, 0.7):
        est, se = reconguard.simulate_privunit_breach(k, a, eps, 50_000, np.random.default_rng(0))
        bound = reconguard.breach_prob_sphere(reconguard.ReconSphereQuery(k, a, 0.0, eps))
        print(f"{eps:4.0f} {a:4.1f}   {est:.4f}+-{se:.4f}  {bound:.4f}")
