"""Winsorized private mean estimation.

The scalar estimator privately localizes the data, clips to the found
interval, and adds Laplace noise scaled to the clipped sensitivity. The
high-dimensional estimator first applies a random signed Hadamard rotation
so every coordinate of the rotated data is concentrated, then runs the
scalar estimator per coordinate and rotates back. On top of these sit a
user-level bounded-mean estimator over per-user averages and an adaptive
query session that splits a total budget across a fixed number of queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import BudgetExhaustedError, PrivacyBudget, RandomSource, UserDataset
from .mechanisms import per_step_budget_for_queries, sample_laplace, strong_composition
from .range_estimation import private_range

# Loose variance constant of the rotated estimator; used by upper-bound checks.
HIGHD_VARIANCE_CONSTANT = 102_400.0


@dataclass(frozen=True)
class MeanEstimate:
    """Private mean estimate.

    value is a scalar for the 1-D estimator and a length-dim vector for the
    rotated one. clean_event records whether the range stage covered every
    point so nothing was clipped; it is computed from the raw data, so it is
    instrumentation for tests and must never be released alongside value.
    """

    value: float | np.ndarray
    clean_event: bool


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return 1 << (n - 1).bit_length()


def fwht(v) -> np.ndarray:
    """Walsh-Hadamard transform along the last axis, unnormalized.

    Sylvester ordering; length must be a power of two. Applying it twice
    multiplies the input by its length. Accepts stacked inputs (..., d).
    """
    a = np.array(v, dtype=float)
    d = a.shape[-1]
    if d < 1 or (d & (d - 1)) != 0:
        raise ValueError(f"length must be a power of two, got {d}")
    h = 1
    while h < d:
        shaped = a.reshape(a.shape[:-1] + (d // (2 * h), 2, h))
        top = shaped[..., 0, :] + shaped[..., 1, :]
        bottom = shaped[..., 0, :] - shaped[..., 1, :]
        a = np.stack([top, bottom], axis=-2).reshape(a.shape)
        h *= 2
    return a


@dataclass(frozen=True)
class RotationMatrixSpec:
    """Signed Hadamard rotation: x maps to fwht(signs * pad(x)) / sqrt(d~).

    dim is the ambient dimension, padded_dim the next power of two, and
    signs the +-1 diagonal of length padded_dim.
    """

    dim: int
    padded_dim: int
    signs: np.ndarray

    def __post_init__(self) -> None:
        if self.padded_dim != next_power_of_two(self.dim):
            raise ValueError("padded_dim must be the next power of two above dim")
        signs = np.asarray(self.signs, dtype=float)
        if signs.shape != (self.padded_dim,) or not np.all(np.abs(signs) == 1.0):
            raise ValueError("signs must be a +-1 vector of length padded_dim")
        object.__setattr__(self, "signs", signs)

    @classmethod
    def draw(cls, dim: int, rng: RandomSource) -> "RotationMatrixSpec":
        padded = next_power_of_two(dim)
        signs = rng.generator.integers(0, 2, size=padded) * 2.0 - 1.0
        return cls(dim=dim, padded_dim=padded, signs=signs)


def rotate(spec: RotationMatrixSpec, x) -> np.ndarray:
    """Orthonormal rotation of x (length dim, zero-padded internally)."""
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != spec.dim:
        raise ValueError(f"expected trailing dimension {spec.dim}, got {arr.shape[-1]}")
    if spec.padded_dim != spec.dim:
        pad = [(0, 0)] * (arr.ndim - 1) + [(0, spec.padded_dim - spec.dim)]
        arr = np.pad(arr, pad)
    return fwht(arr * spec.signs) / math.sqrt(spec.padded_dim)


def rotate_inverse(spec: RotationMatrixSpec, y) -> np.ndarray:
    """Inverse rotation, truncated back to the first dim coordinates."""
    arr = np.asarray(y, dtype=float)
    if arr.shape[-1] != spec.padded_dim:
        raise ValueError(f"expected trailing dimension {spec.padded_dim}, got {arr.shape[-1]}")
    back = fwht(arr) / math.sqrt(spec.padded_dim) * spec.signs
    return back[..., : spec.dim]


def winsorized_mean_1d(
    xs,
    epsilon: float,
    tau: float,
    range_bound: float,
    rng: RandomSource,
) -> MeanEstimate:
    """Scalar private mean: range at epsilon/2, clip, Laplace(8*tau/(eps*n)).

    The clipped mean moves by at most 4*tau/n when one point changes, and
    the added noise spends the remaining epsilon/2 on that sensitivity.
    """
    values = np.asarray(xs, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("xs must be non-empty")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    n = values.size
    interval = private_range(values, epsilon / 2.0, tau, range_bound, rng)
    clean = interval.contains(values)
    clipped = interval.clip(values)
    noise = sample_laplace(8.0 * tau / (epsilon * n), rng)
    return MeanEstimate(value=float(clipped.mean() + noise), clean_event=bool(clean))


def winsorized_mean_highd(
    xs,
    epsilon: float,
    delta: float,
    tau: float,
    range_bound: float,
    gamma: float,
    rng: RandomSource,
) -> MeanEstimate:
    """Rotated coordinate-wise private mean for sup-norm bounded vectors.

    Draws fresh rotation signs, runs the scalar estimator on every rotated
    coordinate with budget eps/sqrt(8*d~*ln(1/delta)) and radius
    10*tau*sqrt(ln(d~*n/gamma)/d~), then rotates the coordinate means back.
    d~ is the padded power-of-two dimension, a conservative substitution.
    """
    points = np.asarray(xs, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("xs must be a non-empty (n, dim) array")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if np.abs(points).max() > range_bound * (1.0 + 1e-9):
        raise ValueError("all points must satisfy the sup-norm range bound")
    n, dim = points.shape
    sign_rng, *coord_rngs = rng.split(next_power_of_two(dim) + 1)
    spec = RotationMatrixSpec.draw(dim, sign_rng)
    padded = spec.padded_dim
    rotated = rotate(spec, points)
    eps_coord = epsilon / math.sqrt(8.0 * padded * math.log(1.0 / delta))
    tau_coord = 10.0 * tau * math.sqrt(math.log(padded * n / gamma) / padded)
    bound_coord = math.sqrt(padded) * range_bound
    coord_means = np.empty(padded)
    clean = True
    for j in range(padded):
        est = winsorized_mean_1d(rotated[:, j], eps_coord, tau_coord, bound_coord, coord_rngs[j])
        coord_means[j] = est.value
        clean = clean and est.clean_event
    value = rotate_inverse(spec, coord_means)
    return MeanEstimate(value=value, clean_event=clean)


def user_level_bounded_mean(
    data: UserDataset,
    budget: PrivacyBudget,
    gamma: float,
    rng: RandomSource,
) -> MeanEstimate:
    """User-level private mean of an l2-bounded item distribution.

    Averages each user's items into a single point, then runs the rotated
    estimator with concentration radius B*sqrt(ln(2n/gamma)/(2m)). Each user
    contributes exactly one averaged point, so item-level privacy of the
    inner estimator is user-level privacy overall.
    """
    if data.bound_kind != "l2":
        raise ValueError("user_level_bounded_mean requires an l2-bounded dataset")
    if budget.delta <= 0.0:
        raise ValueError("user_level_bounded_mean requires delta > 0")
    m = data.common_item_count()
    n = data.n_users
    bound = data.item_bound
    tau = bound * math.sqrt(math.log(2.0 * n / gamma) / (2.0 * m))
    averages = data.per_user_means()
    return winsorized_mean_highd(averages, budget.epsilon, budget.delta, tau, bound, gamma, rng)


class AdaptiveQuerySession:
    """Answers up to k_max adaptively chosen vector queries under one budget.

    Each query maps a user's (m, dim) record to a vector; answers come from
    the rotated estimator at the per-step budget, and the per-step budgets
    recompose to at most the session budget. The session refuses queries
    beyond k_max with BudgetExhaustedError.
    """

    def __init__(
        self,
        data: UserDataset,
        budget: PrivacyBudget,
        k_max: int,
        gamma: float,
        rng: RandomSource,
    ):
        if budget.delta <= 0.0:
            raise ValueError("adaptive query sessions require delta > 0")
        if not (0.0 < gamma < 1.0):
            raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
        self.data = data
        self.budget = budget
        self.k_max = int(k_max)
        self.gamma = gamma
        self.plan = per_step_budget_for_queries(budget, self.k_max)
        self._rng = rng
        self._answered = 0

    @property
    def queries_answered(self) -> int:
        return self._answered

    @property
    def queries_remaining(self) -> int:
        return self.k_max - self._answered

    def composed_budget(self) -> PrivacyBudget:
        """Budget actually spent if all k_max queries are asked."""
        return strong_composition(self.plan)

    def answer(
        self,
        query: Callable[[np.ndarray], np.ndarray],
        tau: float,
        range_bound: float | None = None,
    ) -> MeanEstimate:
        """Private mean of query(record) over users, at the per-step budget.

        tau is the caller's concentration radius for the query values;
        range_bound defaults to the dataset's item bound and must dominate
        the sup norm of every per-user query value.
        """
        if self._answered >= self.k_max:
            raise BudgetExhaustedError(
                f"session already answered its {self.k_max} queries"
            )
        values = np.stack([np.asarray(query(rec), dtype=float).ravel() for rec in self.data.users])
        bound = self.data.item_bound if range_bound is None else range_bound
        estimate = winsorized_mean_highd(
            values,
            self.plan.eps0,
            self.plan.delta0,
            tau,
            bound,
            self.gamma / self.k_max,
            self._rng.child(),
        )
        self._answered += 1
        return estimate


def adaptive_query_session(
    data: UserDataset,
    budget: PrivacyBudget,
    k_max: int,
    gamma: float,
    rng: RandomSource,
) -> AdaptiveQuerySession:
    """Open a session answering up to k_max adaptive queries under budget."""
    if k_max < 1:
        raise ValueError(f"k_max must be at least 1, got {k_max}")
    return AdaptiveQuerySession(data, budget, k_max, gamma, rng)
