# %% [markdown]
# # Random walk on the hypercube
#
# The walk picks a coordinate uniformly and replaces it by a fair bit.
# The polarisation ``rho`` (fraction of ones) is contracted by exactly
# ``1 - 1/N``, which caps the gap in the Lipschitz norm at ``1/N``.  Local
# ascent finds directions that contract slightly less, so the estimated
# ``N delta0`` sits a little under 1.

# %%
import numpy as np

from spectral_certify.bounds import BoundQuery, concentration_bound, plan_sample_size
from spectral_certify.chains import hypercube
from spectral_certify.kernel import GapCertificate, apply_averaging, estimate_gap
from spectral_certify.montecarlo import SimulationConfig, simulate_tail
from spectral_certify.norms import norm

for N in (2, 4, 6):
    cube = hypercube(N)
    rho = cube.polarization()
    contracted = np.allclose(apply_averaging(cube.kernel, rho), (1 - 1 / N) * rho + 1 / (2 * N))
    est = estimate_gap(cube.kernel, cube.lip_space, restarts=2, steps=60)
    print(f"N={N}: affine contraction {contracted}, estimated N*delta0 = {N * (1 - est.raw_ratio):.3f}")

# %% [markdown]
# ## Simulated tails of the first-coordinate indicator
#
# At simulation scale the bound is still vacuous; the planner shows how
# long a run it needs before it says anything.

# %%
N = 6
cube = hypercube(N)
ind = cube.first_coordinate_zero()
cert = GapCertificate(1 / N, cube.lip_space, provenance="analytic")
cfg = SimulationConfig(cube, ind, n=4000, trials=5000, seed=1)
for est in simulate_tail(cfg, [0.05, 0.1, 0.2]):
    b = concentration_bound(BoundQuery(cert, norm(cube.lip_space, ind), est.a, cfg.n))
    print(f"a={est.a:<4} p_hat={est.p_hat:.4f} ci99={est.ci_upper_99:.4f} bound={b.value:.4f}")
for a in (0.1, 0.2):
    plan = plan_sample_size(BoundQuery(cert, norm(cube.lip_space, ind), a, beta=0.01))
    print(f"a={a}: bound below 1% from n = {int(plan.value)}")
