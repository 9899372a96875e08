"""Splitting one privacy budget across many adaptive queries.

per_step_budget_for_queries hands each of k queries a small per-step
budget whose strong composition provably stays under the total. The
query session enforces the count: once k answers are out, further
queries raise instead of silently overspending.
"""

import numpy as np

import userdp as u

total = u.PrivacyBudget(epsilon=8.0, delta=1e-6)
for k in (1, 4, 16, 64):
    plan = u.per_step_budget_for_queries(total, k)
    back = u.strong_composition(plan)
    print(f"k={k:>3}: per-step eps {plan.eps0:.4f}, recomposed eps {back.epsilon:.3f} "
          f"<= {total.epsilon}")

spec = u.DistributionSpec(
    family="bounded_ball", dim=2, bound=1.0, bound_kind="linf", radius=1.0
)
rng = u.RandomSource(85000)
data = u.sample_user_dataset(spec, 20000, 8, rng)
session = u.adaptive_query_session(data, total, k_max=3, gamma=0.05, rng=rng.child())

queries = {
    "mean": lambda record: record.mean(axis=0),
    "abs mean": lambda record: np.abs(record).mean(axis=0),
    "max": lambda record: record.max(axis=0),
}
for name, query in queries.items():
    answer = session.answer(query, tau=0.5)
    print(f"query '{name}': {np.round(answer.value, 3)} "
          f"({session.queries_remaining} queries left)")

try:
    session.answer(queries["mean"], tau=0.5)
except u.BudgetExhaustedError as exc:
    print(f"fourth query refused: {exc}")
