# %% [markdown]
# # Tail bounds and sample-size planning
#
# A chain whose averaging operator contracts mean-zero observables by a
# factor ``1 - delta0`` obeys explicit concentration bounds.  This script
# evaluates them on a lazy i.i.d. chain where ``delta0`` is known exactly.

# %%
import numpy as np

from spectral_certify.bounds import (
    BoundQuery,
    berry_esseen_bound,
    concentration_bound,
    plan_sample_size,
    second_order_bound,
    threshold_n,
)
from spectral_certify.chains import theta_lazy
from spectral_certify.kernel import exact_gap_certificate, stationary_measure
from spectral_certify.norms import FunctionSpace, norm, normalize_observable
from spectral_certify.variance import dynamical_variance_exact

nu = np.array([0.1, 0.2, 0.3, 0.4])
chain = theta_lazy(nu, theta=0.5)
space = FunctionSpace.sup_osc(4)
cert = exact_gap_certificate(chain, space)
phi = np.array([0.0, 1.0, 0.0, 1.0])
print(f"delta0 = {cert.delta0} ({cert.provenance}), ||phi|| = {norm(space, phi)}")
print("smallest admissible n:", threshold_n(cert))

# %% [markdown]
# ## First-order bound across regimes

# %%
for a in (0.05, 0.2, 0.5):
    rep = concentration_bound(BoundQuery(cert, norm(space, phi), a, 20_000))
    print(f"a={a:<5} {rep.theorem:8s} raw={rep.raw_value:.3e} value={rep.value:.3e}")

# %% [markdown]
# ## Second-order bound with the exact variance

# %%
s2 = dynamical_variance_exact(chain, phi).sigma2
q = BoundQuery(cert, norm(space, phi), 0.002, 10 ** 7, S=s2)
print(f"sigma^2 = {s2:.4f}")
print("first order :", concentration_bound(q).value)
print("second order:", second_order_bound(q).value, "at U =", second_order_bound(q).inputs["U"])

# %% [markdown]
# ## Planning and the Berry-Esseen distance

# %%
plan = plan_sample_size(BoundQuery(cert, norm(space, phi), 0.05, beta=0.01))
print(f"n = {int(plan.value)} via {plan.regime}")
mu0 = stationary_measure(chain).weights
tilde = normalize_observable(phi, mu0, s2, space)
for n in (10 ** 6, 10 ** 8):
    be = berry_esseen_bound(BoundQuery(cert, phi_tilde_norm=tilde.norm_value, n=n))
    print(f"n={n:.0e}: Kolmogorov distance <= {be.value:.4f}")
