"""Privately picking the best hypothesis from a finite cover.

Each round draws a random candidate, privately estimates its average
per-user loss with the winsorized scalar mean, and stops with a fixed
coin probability. The reported winner is the candidate with the smallest
noisy estimate seen across all rounds.
"""

import numpy as np

import userdp as u

spec = u.DistributionSpec(
    family="truncated_gaussian", dim=1, bound=1.0,
    mean=np.array([0.7]), sigma=np.array([0.1]),
)
mu = float(u.population_mean(spec)[0])

# linear losses theta*z: the most negative theta wins
params = np.array([[-1.0], [-0.25], [0.3], [0.9]])
hyp = u.HypothesisClass(
    params=params,
    loss=lambda theta, z: float(theta[0] * z[0]),
    bound=1.0,
    loss_batch=lambda theta, zs: theta[0] * zs[:, 0],
)
n, m, eps, alpha = 400, 16, 1.0, 0.05
tau = u.default_tau_for_selection(1.0, hyp.k, n, m, alpha)
print(f"{hyp.k} candidates, population losses {[f'{p[0] * mu:+.2f}' for p in params]}")

rng = u.RandomSource(71000)
data = u.sample_user_dataset(spec, n, m, rng)
result = u.private_select(data, hyp, eps, alpha / hyp.k, tau, rng.child())
print(f"picked index {result.index} (theta={params[result.index][0]:+.2f}) "
      f"after {result.rounds} rounds, capped={result.capped}")
for j, value in result.trace[:5]:
    print(f"  saw candidate {j}: noisy loss {value:+.3f}")
if len(result.trace) > 5:
    print(f"  ... {len(result.trace) - 5} more rounds")

# the convenience wrapper sizes tau and the stop coin from alpha alone
wrapped = u.select_from_cover(
    data, params, lambda theta, z: float(theta[0] * z[0]), 1.0, eps, alpha,
    u.RandomSource(71001),
)
print(f"select_from_cover agrees: index {wrapped.index}")
