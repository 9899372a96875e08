"""Phased ERM for stochastic convex optimization under user-level privacy.

Convexity alone gives no useful localization, so the solver runs a short
sequence of strongly convex proximal problems: each phase regularizes the
loss toward the previous phase's answer, with the regularization weight
growing 4x per phase while the phase's user pool halves. Phases draw on
disjoint users, so the whole run costs one budget.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import PrivacyBudget, RandomSource, UserDataset
from .optimize import FeasibleSet, LocalizationConfig, LossModel, localize_strongly_convex


class PlanInfeasibleError(ValueError):
    """A phase schedule asked for more users than the dataset holds."""


@dataclass(frozen=True)
class PhaseSpec:
    index: int
    n_users: int
    lam: float
    user_start: int
    user_stop: int


@dataclass(frozen=True)
class PhasePlan:
    t_max: int
    lambda0: float
    phases: tuple[PhaseSpec, ...]

    def __post_init__(self) -> None:
        stop = 0
        for t, phase in enumerate(self.phases, start=1):
            if phase.index != t or phase.user_start != stop:
                raise ValueError("phases must be consecutive over disjoint user ranges")
            if phase.user_stop - phase.user_start != phase.n_users or phase.n_users < 1:
                raise ValueError("phase user range must match its size")
            stop = phase.user_stop

    @property
    def users_touched(self) -> int:
        return self.phases[-1].user_stop if self.phases else 0


def build_phase_plan(
    n: int,
    m: int,
    d: int,
    epsilon: float,
    lipschitz: float,
    sigma: float,
    radius: float,
    g_lower: float,
) -> PhasePlan:
    """Phase count, base regularization and disjoint user blocks.

    T = ceil(log2(G*n*sqrt(m)*eps/(sigma*d))), at least 1;
    lambda = sqrt(G*g_lower/(n*m) + sigma^2*d^2/(n^2*m*eps^2))/R;
    phase t gets the next n//2^t fresh users with weight 4^t*lambda.
    """
    if min(n, m, d) < 1 or min(epsilon, lipschitz, sigma, radius, g_lower) <= 0:
        raise ValueError("all phase-plan parameters must be positive")
    growth = lipschitz * n * math.sqrt(m) * epsilon / (sigma * d)
    if growth <= 1.0:
        warnings.warn(
            f"degenerate phase schedule (log2 argument {growth:.3g} <= 1); using one phase",
            RuntimeWarning,
            stacklevel=2,
        )
        t_max = 1
    else:
        t_max = max(1, math.ceil(math.log2(growth)))
    lambda0 = math.sqrt(
        lipschitz * g_lower / (n * m) + sigma**2 * d**2 / (n**2 * m * epsilon**2)
    ) / radius
    phases = []
    cursor = 0
    for t in range(1, t_max + 1):
        n_t = n // (2**t)
        if n_t == 0:
            raise PlanInfeasibleError(
                f"phase {t} of {t_max} would receive 0 of {n} users; "
                "need more users or fewer phases"
            )
        phases.append(
            PhaseSpec(index=t, n_users=n_t, lam=(4.0**t) * lambda0,
                      user_start=cursor, user_stop=cursor + n_t)
        )
        cursor += n_t
    return PhasePlan(t_max=t_max, lambda0=lambda0, phases=tuple(phases))


def _regularized(base: LossModel, lam: float, center: np.ndarray, radius: float) -> LossModel:
    """base plus (lam/2)*||theta - center||^2, constants updated to match."""
    center = np.asarray(center, dtype=float)

    def evaluate(theta, item):
        gap = np.asarray(theta, dtype=float) - center
        return base.evaluate(theta, item) + 0.5 * lam * float(gap @ gap)

    def gradient(theta, item):
        return np.asarray(base.gradient(theta, item), dtype=float) + lam * (
            np.asarray(theta, dtype=float) - center
        )

    def evaluate_batch(theta, items):
        gap = np.asarray(theta, dtype=float) - center
        return base.item_losses(theta, items) + 0.5 * lam * float(gap @ gap)

    def gradient_batch(theta, items):
        shift = lam * (np.asarray(theta, dtype=float) - center)
        return base.item_gradients(theta, items) + shift

    def factory(data: UserDataset) -> Callable[[np.ndarray], np.ndarray]:
        inner = base.user_gradient_fn(data)

        def user_gradients(theta: np.ndarray) -> np.ndarray:
            shift = lam * (np.asarray(theta, dtype=float) - center)
            return inner(theta) + shift

        return user_gradients

    # Both theta and the anchor live in the radius-R ball, so the proximal
    # term adds at most 2*R*lam to the gradient norm.
    return LossModel(
        evaluate=evaluate,
        gradient=gradient,
        lipschitz_G=base.lipschitz_G + 2.0 * radius * lam,
        smoothness_H=base.smoothness_H + lam,
        strong_convexity_mu=base.strong_convexity_mu + lam,
        convex=True,
        evaluate_batch=evaluate_batch,
        gradient_batch=gradient_batch,
        user_gradient_factory=factory,
    )


def phased_erm(
    data: UserDataset,
    model: LossModel,
    feasible: FeasibleSet,
    budget: PrivacyBudget,
    sigma: float,
    rng: RandomSource,
    config: LocalizationConfig = LocalizationConfig(),
    *,
    on_phase: Optional[Callable[[PhaseSpec, np.ndarray], None]] = None,
) -> np.ndarray:
    """Private stochastic convex optimization by phased regularized ERM.

    Each phase solves the previous-center-anchored proximal problem with
    localize_strongly_convex on its own block of fresh users; disjointness
    keeps the whole run within the single (eps, delta) budget. sigma is the
    per-item gradient noise scale. Requires a convex model, equal item
    counts, and delta in (0, 1/n^2].
    """
    if not model.convex:
        raise ValueError("phased_erm requires a convex loss model")
    n = data.n_users
    if budget.delta <= 0.0:
        raise ValueError("phased_erm requires delta > 0")
    if budget.delta > 1.0 / n**2:
        raise ValueError(
            f"delta={budget.delta} exceeds 1/n^2 = {1.0 / n**2:.3g}; "
            "tighten delta or add users"
        )
    m = data.common_item_count()
    g_tilde = sigma * math.sqrt(data.dim)
    plan = build_phase_plan(
        n, m, data.dim, budget.epsilon, model.lipschitz_G, sigma,
        feasible.radius, min(model.lipschitz_G, g_tilde),
    )
    theta = feasible.center.copy()
    phase_rngs = rng.split(len(plan.phases))
    for phase, phase_rng in zip(plan.phases, phase_rngs):
        block = data.subset(range(phase.user_start, phase.user_stop))
        proximal = _regularized(model, phase.lam, theta, feasible.radius)
        theta = localize_strongly_convex(
            block, proximal, feasible, budget, sigma, phase_rng, config, start=theta
        )
        if on_phase is not None:
            on_phase(phase, theta)
    return theta
