# %% [markdown]
# # Exact laws on a two-state chain
#
# With few distinct observable values the law of the sum is computed
# exactly by a forward recursion, so the Kolmogorov distance to the
# normal law is exact too.  ``ks * sqrt(n)`` settles to a constant far
# below the explicit coefficient.

# %%
import math

import numpy as np

from spectral_certify.bounds import berry_esseen_coefficient
from spectral_certify.kernel import FiniteKernel, exact_gap_certificate, stationary_measure
from spectral_certify.montecarlo import exact_sum_distribution, ks_distance
from spectral_certify.norms import FunctionSpace, normalize_observable
from spectral_certify.variance import dynamical_variance_exact

chain = FiniteKernel.two_state(0.3, 0.4)
space = FunctionSpace.sup_osc(2)
cert = exact_gap_certificate(chain, space)
mu0 = stationary_measure(chain).weights
phi = np.array([0.0, 1.0])
tilde = normalize_observable(phi, mu0, dynamical_variance_exact(chain, phi).sigma2, space)
coef = berry_esseen_coefficient(cert.delta0) * max(tilde.norm_value, tilde.norm_value ** 3)
print(f"delta0 = {cert.delta0:.3f}, bound coefficient = {coef:.1f}")

for n in (100, 400, 1600):
    dist = exact_sum_distribution(chain, tilde.values, mu0, n).standardized(0.0, 1.0)
    ks = ks_distance(dist).ks_distance
    print(f"n={n:5d} ks={ks:.5f} ks*sqrt(n)={ks * math.sqrt(n):.4f}")
