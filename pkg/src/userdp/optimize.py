"""First-order optimization with privately estimated gradients.

The generic loop is split into Query (where to evaluate), Update (apply a
gradient step) and Aggregate (turn the iterate history into an output), so
the same machinery runs with exact gradients, stochastic oracles, or the
private winsorized mean of per-user gradients. On top of the loop sit the
gradient-concentration radius used to pick the winsorization scale and a
localization schedule for strongly convex objectives.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import PrivacyBudget, RandomSource, UserDataset
from .mean import MeanEstimate, winsorized_mean_highd
from .mechanisms import per_step_budget_for_queries

VARIANTS = ("convex", "strongly_convex", "nonconvex")


@dataclass(frozen=True)
class FeasibleSet:
    """Euclidean ball of radius radius around center."""

    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        center = np.asarray(self.center, dtype=float).ravel()
        if center.size == 0 or not np.all(np.isfinite(center)):
            raise ValueError("center must be a finite non-empty vector")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    def contains(self, theta, rtol: float = 1e-9) -> bool:
        offset = np.asarray(theta, dtype=float) - self.center
        return bool(np.linalg.norm(offset) <= self.radius * (1.0 + rtol))

    def project(self, y) -> np.ndarray:
        arr = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("cannot project a non-finite point")
        offset = arr - self.center
        norm = np.linalg.norm(offset)
        if norm <= self.radius:
            return arr.copy()
        return self.center + offset * (self.radius / norm)


def project(feasible: FeasibleSet, y) -> np.ndarray:
    """Euclidean projection of y onto the ball."""
    return feasible.project(y)


def gradient_mapping(feasible: FeasibleSet, theta, gradient, stepsize: float) -> np.ndarray:
    """Projected-gradient residual (theta - project(theta - s*g)) / s.

    Coincides with the gradient whenever the step stays feasible, so it is
    the stationarity measure that survives the constraint.
    """
    if not (np.isfinite(stepsize) and stepsize > 0):
        raise ValueError(f"stepsize must be positive, got {stepsize}")
    theta = np.asarray(theta, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    stepped = feasible.project(theta - stepsize * gradient)
    return (theta - stepped) / stepsize


@dataclass
class LossModel:
    """Per-item loss with its curvature constants.

    evaluate(theta, item) and gradient(theta, item) act on single items;
    the optional *_batch fields vectorize over an (k, d) item block and the
    optional user_gradient_factory returns a per-dataset closure mapping
    theta to the (n, d) array of per-user average gradients. lipschitz_G
    bounds the gradient norm on the feasible set, smoothness_H the gradient
    Lipschitz constant, strong_convexity_mu is 0 when absent.
    """

    evaluate: Callable[[np.ndarray, np.ndarray], float]
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz_G: float
    smoothness_H: float
    strong_convexity_mu: float = 0.0
    convex: bool = False
    evaluate_batch: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    gradient_batch: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    user_gradient_factory: Optional[
        Callable[[UserDataset], Callable[[np.ndarray], np.ndarray]]
    ] = None

    def __post_init__(self) -> None:
        if self.lipschitz_G <= 0 or not math.isfinite(self.lipschitz_G):
            raise ValueError(f"lipschitz_G must be positive, got {self.lipschitz_G}")
        if self.smoothness_H < 0:
            raise ValueError(f"smoothness_H must be nonnegative, got {self.smoothness_H}")
        if self.strong_convexity_mu < 0:
            raise ValueError("strong_convexity_mu must be nonnegative")
        if self.strong_convexity_mu > 0 and not self.convex:
            raise ValueError("strongly convex models must set the convex flag")

    def item_losses(self, theta, items) -> np.ndarray:
        items = np.asarray(items, dtype=float)
        if self.evaluate_batch is not None:
            return np.asarray(self.evaluate_batch(theta, items), dtype=float)
        return np.array([self.evaluate(theta, z) for z in items], dtype=float)

    def item_gradients(self, theta, items) -> np.ndarray:
        items = np.asarray(items, dtype=float)
        if self.gradient_batch is not None:
            return np.asarray(self.gradient_batch(theta, items), dtype=float)
        return np.stack([np.asarray(self.gradient(theta, z), dtype=float) for z in items])

    def user_average_gradients(self, data: UserDataset, theta) -> np.ndarray:
        return np.stack([self.item_gradients(theta, rec).mean(axis=0) for rec in data.users])

    def user_gradient_fn(self, data: UserDataset) -> Callable[[np.ndarray], np.ndarray]:
        """Closure theta -> (n, d) per-user average gradients, fast path if any."""
        if self.user_gradient_factory is not None:
            return self.user_gradient_factory(data)
        return lambda theta: self.user_average_gradients(data, theta)

    def dataset_loss(self, data: UserDataset, theta) -> float:
        per_user = [self.item_losses(theta, rec).mean() for rec in data.users]
        return float(np.mean(per_user))


class OptimizerState:
    """Query/Update/Aggregate record for one projected-SGD run.

    query() returns the point whose gradient the caller must supply to the
    next update(); aggregate(rng) folds the queried iterates into the
    variant's output: uniform average (convex), weighted average of the
    post-restart tail (strongly convex), or a uniformly random queried
    iterate (nonconvex, the only variant that draws randomness).
    """

    def __init__(
        self,
        variant: str,
        feasible: FeasibleSet,
        t_max: int,
        smoothness: float,
        strong_convexity: float = 0.0,
        noise_bound: float = 0.0,
        start=None,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if t_max < 0:
            raise ValueError(f"t_max must be nonnegative, got {t_max}")
        if variant == "strongly_convex" and strong_convexity <= 0:
            raise ValueError("strongly_convex variant needs strong_convexity > 0")
        self.variant = variant
        self.feasible = feasible
        self.t_max = int(t_max)
        self.smoothness = float(smoothness)
        self.strong_convexity = float(strong_convexity)
        self.noise_bound = float(noise_bound)
        self.current = feasible.project(feasible.center if start is None else start)
        self.step = 0
        self.iterates: list[np.ndarray] = []
        if variant == "strongly_convex":
            self._restart_at = self.t_max // 2
            mu = self.strong_convexity
            self._t0 = max(1, math.ceil(2.0 * self.smoothness / mu)) if self.smoothness > 0 else 1
            self._base_eta = 1.0 / self.smoothness if self.smoothness > 0 else 1.0 / mu
        else:
            self._fixed_eta = self._fixed_stepsize()

    def _fixed_stepsize(self) -> float:
        candidates = []
        if self.smoothness > 0:
            candidates.append(1.0 / self.smoothness)
        if self.variant == "convex" and self.noise_bound > 0 and self.t_max > 0:
            candidates.append(self.feasible.radius / (self.noise_bound * math.sqrt(self.t_max)))
        # Flat objectives with a noiseless oracle: any scale works, use R.
        return min(candidates) if candidates else self.feasible.radius

    def _stepsize(self) -> float:
        if self.variant != "strongly_convex":
            return self._fixed_eta
        if self.step < self._restart_at:
            return self._base_eta
        s = self.step - self._restart_at + 1
        return 2.0 / (self.strong_convexity * (s + self._t0))

    def query(self) -> np.ndarray:
        if self.step >= self.t_max:
            raise RuntimeError("optimizer already ran its full schedule")
        assert self.feasible.contains(self.current)
        return self.current

    def update(self, gradient) -> None:
        gradient = np.asarray(gradient, dtype=float)
        self.iterates.append(self.current.copy())
        eta = self._stepsize()
        self.current = self.feasible.project(self.current - eta * gradient)
        self.step += 1
        if self.variant == "strongly_convex" and self.step == self._restart_at and self.step > 0:
            self.current = self._phase_average(self.iterates[: self._restart_at], offset=1)

    def _phase_average(self, iterates: list[np.ndarray], offset: int) -> np.ndarray:
        weights = np.arange(len(iterates), dtype=float) + offset
        stacked = np.stack(iterates)
        return (weights[:, None] * stacked).sum(axis=0) / weights.sum()

    def aggregate(self, rng: RandomSource) -> np.ndarray:
        if not self.iterates:
            return self.current.copy()
        if self.variant == "convex":
            return np.stack(self.iterates).mean(axis=0)
        if self.variant == "nonconvex":
            pick = int(rng.generator.integers(len(self.iterates)))
            return self.iterates[pick].copy()
        tail = self.iterates[self._restart_at :]
        if not tail:
            return self.current.copy()
        return self._phase_average(tail, offset=self._t0 + 1)


def _run_sgd(
    variant: str,
    oracle: Callable[[np.ndarray, int], np.ndarray],
    feasible: FeasibleSet,
    t_max: int,
    rng: RandomSource,
    smoothness: float,
    strong_convexity: float,
    noise_bound: float,
    start,
) -> np.ndarray:
    state = OptimizerState(
        variant,
        feasible,
        t_max,
        smoothness=smoothness,
        strong_convexity=strong_convexity,
        noise_bound=noise_bound,
        start=start,
    )
    for t in range(t_max):
        theta = state.query()
        state.update(oracle(theta, t))
    return state.aggregate(rng)


def sgd_convex(
    oracle,
    feasible: FeasibleSet,
    t_max: int,
    rng: RandomSource,
    *,
    smoothness: float,
    noise_bound: float = 0.0,
    start=None,
) -> np.ndarray:
    """Projected SGD with fixed stepsize and uniform iterate averaging."""
    return _run_sgd("convex", oracle, feasible, t_max, rng, smoothness, 0.0, noise_bound, start)


def sgd_strongly_convex(
    oracle,
    feasible: FeasibleSet,
    t_max: int,
    rng: RandomSource,
    *,
    smoothness: float,
    strong_convexity: float,
    noise_bound: float = 0.0,
    start=None,
) -> np.ndarray:
    """Fixed-stepsize phase with weighted averaging, then one restart with
    decreasing stepsize 2/(mu*(s+t0))."""
    return _run_sgd(
        "strongly_convex",
        oracle,
        feasible,
        t_max,
        rng,
        smoothness,
        strong_convexity,
        noise_bound,
        start,
    )


def sgd_nonconvex(
    oracle,
    feasible: FeasibleSet,
    t_max: int,
    rng: RandomSource,
    *,
    smoothness: float,
    start=None,
) -> np.ndarray:
    """Fixed-stepsize projected SGD returning a uniformly random iterate."""
    return _run_sgd("nonconvex", oracle, feasible, t_max, rng, smoothness, 0.0, 0.0, start)


def gradient_concentration_radius(
    sigma: float,
    d: int,
    m: int,
    radius: float,
    smoothness: float,
    n: int,
    alpha: float,
) -> float:
    """Uniform radius around the population gradient that holds for every
    user's average gradient simultaneously, failure probability alpha.

    sigma*sqrt(d*log(max(e, R*H*m/(d*sigma)))/m + log(n/alpha)/m), with the
    growth constant fixed to 1.
    """
    if min(sigma, radius, smoothness) <= 0 or min(d, m, n) < 1:
        raise ValueError("all radius parameters must be positive")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    log_arg = max(math.e, radius * smoothness * m / (d * sigma))
    return sigma * math.sqrt(d * math.log(log_arg) / m + math.log(n / alpha) / m)


def winsorized_first_order(
    data: UserDataset,
    model: LossModel,
    feasible: FeasibleSet,
    t_max: int,
    budget: PrivacyBudget,
    tau: float,
    gamma: float,
    variant: str,
    rng: RandomSource,
    *,
    start=None,
    on_step: Optional[Callable[[int, np.ndarray, MeanEstimate], None]] = None,
) -> np.ndarray:
    """Projected SGD driven by the private mean of per-user average gradients.

    Each of the t_max steps estimates the gradient with
    winsorized_mean_highd at the per-step budget eps/(2*sqrt(2*T*ln(2/d))),
    delta/(2*T); strong composition of the steps stays within budget.
    on_step receives (step, queried point, private estimate) when supplied;
    clipped steps are kept as-is, never re-sampled.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if budget.delta <= 0.0:
        raise ValueError("winsorized first-order optimization requires delta > 0")
    n = data.n_users
    state = OptimizerState(
        variant,
        feasible,
        t_max,
        smoothness=model.smoothness_H,
        strong_convexity=model.strong_convexity_mu,
        noise_bound=model.lipschitz_G,
        start=start,
    )
    if t_max == 0:
        return state.aggregate(rng)
    if n < math.sqrt(data.dim * t_max) / budget.epsilon:
        warnings.warn(
            f"n={n} users is below sqrt(d*T)/eps = "
            f"{math.sqrt(data.dim * t_max) / budget.epsilon:.1f}; "
            "private gradients may be noise-dominated",
            RuntimeWarning,
            stacklevel=2,
        )
    plan = per_step_budget_for_queries(budget, t_max)
    user_gradients = model.user_gradient_fn(data)
    step_rngs = rng.split(t_max + 1)
    for t in range(t_max):
        theta = state.query()
        grads = user_gradients(theta)
        estimate = winsorized_mean_highd(
            grads, plan.eps0, plan.delta0, tau, model.lipschitz_G, gamma, step_rngs[t]
        )
        if on_step is not None:
            on_step(t, theta, estimate)
        state.update(estimate.value)
    return state.aggregate(step_rngs[t_max])


@dataclass(frozen=True)
class LocalizationConfig:
    """Scale knobs for the localization schedule; 1.0 reproduces the
    schedule with all growth constants set to 1."""

    t_scale: float = 1.0
    gamma_scale: float = 1.0
    tau_scale: float = 1.0

    def __post_init__(self) -> None:
        for name in ("t_scale", "gamma_scale", "tau_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LocalizationSchedule:
    t_max: int
    gamma: float
    tau: float


def localization_schedule(
    model: LossModel,
    feasible: FeasibleSet,
    n: int,
    m: int,
    d: int,
    epsilon: float,
    sigma: float,
    config: LocalizationConfig = LocalizationConfig(),
) -> LocalizationSchedule:
    """Iteration count, failure budget and winsorization radius for the
    strongly convex localization run.

    T = (H/mu)*ln(n^2*m*(G_/G~^2)*mu*R*eps^2/d) floored at one iteration
    (log argument floored at e), gamma = sigma^2*d^2/(mu^2*n^2*m*eps^2*R^2)
    clamped into [1e-12, 0.5], tau from the concentration radius at
    failure probability gamma/3.
    """
    mu = model.strong_convexity_mu
    if mu <= 0:
        raise ValueError("localization requires strong_convexity_mu > 0")
    if sigma <= 0 or epsilon <= 0:
        raise ValueError("sigma and epsilon must be positive")
    radius = feasible.radius
    g_tilde = sigma * math.sqrt(d)
    g_lower = min(model.lipschitz_G, g_tilde)
    log_arg = max(math.e, n * n * m * (g_lower / g_tilde**2) * mu * radius * epsilon**2 / d)
    t_raw = (model.smoothness_H / mu) * math.log(log_arg)
    t_max = max(1, math.ceil(config.t_scale * t_raw))
    gamma = config.gamma_scale * sigma**2 * d**2 / (mu**2 * n**2 * m * epsilon**2 * radius**2)
    gamma = min(max(gamma, 1e-12), 0.5)
    tau = config.tau_scale * gradient_concentration_radius(
        sigma, d, m, radius, max(model.smoothness_H, mu), n, gamma / 3.0
    )
    return LocalizationSchedule(t_max=t_max, gamma=gamma, tau=tau)


def localize_strongly_convex(
    data: UserDataset,
    model: LossModel,
    feasible: FeasibleSet,
    budget: PrivacyBudget,
    sigma: float,
    rng: RandomSource,
    config: LocalizationConfig = LocalizationConfig(),
    *,
    start=None,
    on_step=None,
) -> np.ndarray:
    """Strongly convex private ERM via the localization schedule.

    sigma is the per-item gradient noise scale used to size both the
    iteration count and the winsorization radius; the squared distance to
    the empirical minimizer contracts at roughly sigma^2*d^2/(mu^2*n^2*m*eps^2).
    """
    schedule = localization_schedule(
        model,
        feasible,
        data.n_users,
        data.common_item_count(),
        data.dim,
        budget.epsilon,
        sigma,
        config,
    )
    return winsorized_first_order(
        data,
        model,
        feasible,
        schedule.t_max,
        budget,
        schedule.tau,
        schedule.gamma,
        "strongly_convex",
        rng,
        start=start,
        on_step=on_step,
    )
