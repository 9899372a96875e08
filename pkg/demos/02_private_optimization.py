"""Two private optimizers on synthetic user data.

First a strongly convex quadratic solved by iterative localization: each
round privately estimates the average gradient, steps, and shrinks the
search region. Then a linear objective solved by phased ERM, which chains
regularized solves on disjoint user batches with geometrically increasing
regularization.
"""

import warnings

import numpy as np

import userdp as u

d, m = 4, 16
budget = u.PrivacyBudget(epsilon=2.0, delta=1e-6)

# strongly convex: squared distance to the batch mean
sigma = 0.025
spec = u.DistributionSpec(
    family="truncated_gaussian", dim=d, bound=1.0,
    mean=np.full(d, 0.1), sigma=np.full(d, sigma),
)
feasible = u.FeasibleSet(center=np.zeros(d), radius=1.0)
quadratic = u.make_loss("quadratic", gradient_bound=3.0)
print("localization on a quadratic (minimizer = sample mean of user means):")
for n in (16000, 32000, 64000):
    dists = []
    for t in range(15):
        rng = u.RandomSource(61000 ^ (n + t))
        data = u.sample_user_dataset(spec, n, m, rng)
        theta = u.localize_strongly_convex(data, quadratic, feasible, budget, sigma, rng.child())
        star = feasible.project(data.per_user_means().mean(axis=0))
        dists.append(float(np.sum((theta - star) ** 2)))
    print(f"  n={n:>6}: median squared distance {np.median(dists):.2e}")
print("  doubling n shrinks the squared distance roughly 4x")

# linear objective over the unit ball, minimized at mu/|mu|
lin_spec = u.DistributionSpec(
    family="truncated_gaussian", dim=d, bound=0.5,
    mean=np.full(d, 0.025), sigma=np.full(d, 0.05),
)
linear = u.make_loss("linear", gradient_bound=0.5 * np.sqrt(d))
mu = u.population_mean(lin_spec)
n = 512
excesses = []
for t in range(10):
    rng = u.RandomSource(62000 + t)
    data = u.sample_user_dataset(lin_spec, n, m, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        theta = u.phased_erm(data, linear, feasible, budget, 4.0, rng.child())
    excesses.append(float(np.linalg.norm(mu)) - float(theta @ mu))
print(f"phased ERM on a linear objective, n={n}:")
print(f"  mean excess population risk {np.mean(excesses):.4f} (optimum risk {-np.linalg.norm(mu):.4f})")

plan = u.build_phase_plan(n, m, d, budget.epsilon, linear.lipschitz_G, 4.0, 1.0, 1.0)
print(f"  phase plan: {len(plan.phases)} phases, batch sizes {[p.n_users for p in plan.phases]}")
