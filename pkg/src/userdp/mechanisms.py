"""Noise primitives and privacy-composition arithmetic.

Laplace sampling goes through an explicit inverse CDF so the whole noise
pipeline is reproducible and auditable. Budget formulas use the natural
logarithm throughout; it is the conservative reading (smaller per-step
epsilon) and matches the composition literature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PrivacyBudget, RandomSource

# Uniform draws are clamped into (0, 1) before CDF inversion.
_U_EPS = 2.0**-53


@dataclass(frozen=True)
class CompositionPlan:
    """Per-step budget for k adaptively composed mechanisms.

    Attributes:
        k: number of sub-mechanisms, at least 1.
        eps0: per-step epsilon.
        delta0: per-step delta.
        delta_slack: extra delta spent by the composition bound itself.
    """

    k: int
    eps0: float
    delta0: float
    delta_slack: float

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        for name in ("eps0", "delta0", "delta_slack"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


def inverse_laplace_cdf(u: float, scale: float) -> float:
    """Quantile function of the zero-mean Laplace law with the given scale.

    F(x) = 1 - exp(-x/scale)/2 for x >= 0 and exp(x/scale)/2 below zero;
    u = 1/2 maps to 0 exactly.
    """
    if u >= 0.5:
        return -scale * math.log(2.0 * (1.0 - u))
    return scale * math.log(2.0 * u)


def sample_laplace(scale: float, rng: RandomSource) -> float:
    """One Laplace(scale) draw from a single uniform via CDF inversion."""
    if not np.isfinite(scale) or scale <= 0:
        raise ValueError(f"scale must be finite and positive, got {scale}")
    u = float(rng.generator.random())
    u = min(max(u, _U_EPS), 1.0 - _U_EPS)
    return inverse_laplace_cdf(u, scale)


def exponential_mechanism(costs, epsilon: float, rng: RandomSource) -> int:
    """Sample an index with probability proportional to exp(-epsilon*cost/2).

    Costs are shifted by their minimum before exponentiation; the sampling
    distribution is invariant to the shift and the shift prevents underflow.
    """
    c = np.asarray(costs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("costs must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(c)):
        raise ValueError("costs must be finite")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    weights = np.exp(-0.5 * epsilon * (c - c.min()))
    cumulative = np.cumsum(weights)
    u = rng.generator.random() * cumulative[-1]
    return int(np.searchsorted(cumulative, u, side="right"))


def strong_composition(plan: CompositionPlan) -> PrivacyBudget:
    """Overall budget of k adaptive (eps0, delta0) steps.

    Returns (k*eps0*(e^eps0 - 1) + sqrt(2k*ln(1/delta_slack))*eps0,
    k*delta0 + delta_slack).
    """
    if plan.delta_slack <= 0.0:
        if plan.k > 1:
            raise ValueError("delta_slack must be positive when composing more than one step")
        # A single step composes to itself; the formula needs positive slack.
        return PrivacyBudget(plan.eps0, plan.delta0)
    eps_bar = plan.k * plan.eps0 * (math.exp(plan.eps0) - 1.0) + math.sqrt(
        2.0 * plan.k * math.log(1.0 / plan.delta_slack)
    ) * plan.eps0
    delta_bar = plan.k * plan.delta0 + plan.delta_slack
    return PrivacyBudget(eps_bar, delta_bar)


def per_step_budget_for_queries(total: PrivacyBudget, k: int) -> CompositionPlan:
    """Split a total (epsilon, delta) budget across k adaptive queries.

    eps0 = eps / (2*sqrt(2k*ln(2/delta))), delta0 = delta/(2k), slack delta/2.
    Recomposing the plan through strong_composition never exceeds the total.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if total.delta <= 0.0:
        raise ValueError("adaptive query budgeting requires delta > 0")
    eps0 = total.epsilon / (2.0 * math.sqrt(2.0 * k * math.log(2.0 / total.delta)))
    return CompositionPlan(k=k, eps0=eps0, delta0=total.delta / (2.0 * k), delta_slack=total.delta / 2.0)
