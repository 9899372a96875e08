"""Pure-epsilon private selection over a finite hypothesis class.

Rounds repeat until a coin lands: pick a hypothesis uniformly, release its
privately estimated empirical loss, then stop with fixed probability. The
returned hypothesis is the argmin of the released values. Random stopping
keeps the whole transcript epsilon-DP regardless of how many rounds run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import RandomSource, UserDataset
from .mean import winsorized_mean_1d


@dataclass(frozen=True)
class HypothesisClass:
    """K candidate parameter vectors with a uniformly bounded loss.

    loss(theta, item) must stay within [-bound, bound] on the data it is
    evaluated on (checked at evaluation time); loss_batch optionally
    vectorizes over an (m, d) item block.
    """

    params: np.ndarray
    loss: Callable[[np.ndarray, np.ndarray], float]
    bound: float
    loss_batch: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self) -> None:
        params = np.atleast_2d(np.asarray(self.params, dtype=float))
        if params.shape[0] < 1:
            raise ValueError("need at least one hypothesis")
        if not (self.bound > 0 and math.isfinite(self.bound)):
            raise ValueError(f"bound must be positive, got {self.bound}")
        object.__setattr__(self, "params", params)

    @property
    def k(self) -> int:
        return self.params.shape[0]

    def _item_losses(self, theta: np.ndarray, items: np.ndarray) -> np.ndarray:
        if self.loss_batch is not None:
            return np.asarray(self.loss_batch(theta, items), dtype=float)
        return np.array([self.loss(theta, z) for z in items], dtype=float)

    def per_user_losses(self, data: UserDataset, index: int) -> np.ndarray:
        """Empirical loss of hypothesis index on each user, length n."""
        theta = self.params[index]
        values = np.array(
            [self._item_losses(theta, rec).mean() for rec in data.users], dtype=float
        )
        if np.abs(values).max() > self.bound * (1.0 + 1e-9):
            raise ValueError(
                f"hypothesis {index} produced losses outside [-{self.bound}, {self.bound}]"
            )
        return values


@dataclass(frozen=True)
class SelectionResult:
    """index/value are the argmin over the released rounds; trace records
    every (hypothesis, released value) pair; capped means the safety cap
    ended the run instead of the stopping coin."""

    index: int
    value: float
    rounds: int
    capped: bool
    trace: tuple[tuple[int, float], ...]


def default_trial_cap(k: int, gamma_stop: float) -> int:
    """Safety cap at 10x the rounds needed to see every hypothesis."""
    return max(1, math.ceil((k / gamma_stop) * math.log(1.0 / gamma_stop) * 10.0))


def private_select(
    data: UserDataset,
    hyp: HypothesisClass,
    epsilon: float,
    gamma_stop: float,
    tau: float,
    rng: RandomSource,
    trial_cap: Optional[int] = None,
) -> SelectionResult:
    """Random-stopping private selection, epsilon-DP for the full transcript.

    Each round draws a uniform hypothesis, releases its per-user empirical
    mean loss through winsorized_mean_1d at budget epsilon/3 with radius
    tau and range bound hyp.bound, then flips the stopping coin. Runs that
    hit trial_cap before the coin lands are returned flagged.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not (0.0 < gamma_stop <= 1.0):
        raise ValueError(f"gamma_stop must lie in (0, 1], got {gamma_stop}")
    cap = default_trial_cap(hyp.k, gamma_stop) if trial_cap is None else int(trial_cap)
    if cap < 1:
        raise ValueError(f"trial_cap must be at least 1, got {trial_cap}")
    loss_rows: dict[int, np.ndarray] = {}
    trace: list[tuple[int, float]] = []
    gen = rng.generator
    capped = True
    for _ in range(cap):
        j = int(gen.integers(hyp.k))
        if j not in loss_rows:
            loss_rows[j] = hyp.per_user_losses(data, j)
        estimate = winsorized_mean_1d(
            loss_rows[j], epsilon / 3.0, tau, hyp.bound, rng.child()
        )
        trace.append((j, estimate.value))
        if gen.random() < gamma_stop:
            capped = False
            break
    best = min(range(len(trace)), key=lambda i: trace[i][1])
    return SelectionResult(
        index=trace[best][0],
        value=trace[best][1],
        rounds=len(trace),
        capped=capped,
        trace=tuple(trace),
    )


def default_tau_for_selection(bound: float, k: int, n: int, m: int, alpha: float) -> float:
    """Concentration radius (B/2)*sqrt((ln(K*n) + ln(10/alpha))/m) under
    which every hypothesis's empirical user losses stay within tau of the
    population loss except with probability alpha."""
    if min(bound, alpha) <= 0 or min(k, n, m) < 1:
        raise ValueError("all parameters must be positive")
    if alpha >= 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return (bound / 2.0) * math.sqrt((math.log(k * n) + math.log(10.0 / alpha)) / m)


def select_from_cover(
    data: UserDataset,
    cover: np.ndarray,
    loss: Callable[[np.ndarray, np.ndarray], float],
    bound: float,
    epsilon: float,
    alpha: float,
    rng: RandomSource,
    *,
    loss_batch: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    trial_cap: Optional[int] = None,
) -> SelectionResult:
    """Selection over an externally supplied cover with default knobs:
    stopping probability alpha/K and the default concentration radius."""
    hyp = HypothesisClass(params=cover, loss=loss, bound=bound, loss_batch=loss_batch)
    m = int(np.min(data.item_counts))
    tau = default_tau_for_selection(bound, hyp.k, data.n_users, m, alpha)
    return private_select(
        data, hyp, epsilon, alpha / hyp.k, tau, rng, trial_cap=trial_cap
    )
