"""Private localization of concentrated scalar data.

Tiles [-B, B] with bins of width 2*tau, snaps each point to the nearest bin
midpoint, scores each midpoint by how many points lie strictly to either
side, and samples a midpoint through the exponential mechanism. The winner
mu defines the interval [mu - 2*tau, mu + 2*tau], which contains all the
data with high probability whenever the data are concentrated at radius tau.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RandomSource
from .mechanisms import exponential_mechanism


@dataclass(frozen=True)
class RangeInterval:
    """Interval returned by private_range; always of width 4*tau."""

    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def clip(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lo, self.hi)

    def contains(self, values) -> bool:
        v = np.asarray(values, dtype=float)
        return bool(np.all((v >= self.lo) & (v <= self.hi)))


def bin_midpoints(tau: float, range_bound: float) -> np.ndarray:
    """Midpoints of ceil(B/tau) bins of width 2*tau tiling [-B, B].

    The last bin is truncated at B when 2*tau*ceil(B/tau) overshoots; its
    midpoint is the true center of the shorter bin. A single bin degenerates
    to the midpoint 0.
    """
    if tau <= 0 or range_bound <= 0:
        raise ValueError("tau and range_bound must be positive")
    count = int(np.ceil(range_bound / tau))
    if count <= 1:
        return np.array([0.0])
    lowers = -range_bound + 2.0 * tau * np.arange(count)
    uppers = np.minimum(lowers + 2.0 * tau, range_bound)
    return (lowers + uppers) / 2.0


def snap_to_midpoints(values: np.ndarray, midpoints: np.ndarray) -> np.ndarray:
    """Nearest midpoint for each value; exact ties go to the lower one."""
    idx = np.searchsorted(midpoints, values)
    left = np.clip(idx - 1, 0, len(midpoints) - 1)
    right = np.clip(idx, 0, len(midpoints) - 1)
    d_left = np.abs(values - midpoints[left])
    d_right = np.abs(values - midpoints[right])
    # Strict inequality keeps ties on the lower midpoint.
    choose_right = d_right < d_left
    return midpoints[np.where(choose_right, right, left)]


def _side_costs(snapped: np.ndarray, midpoints: np.ndarray) -> np.ndarray:
    """Cost of each midpoint: max of strict counts below and above it."""
    ordered = np.sort(snapped)
    below = np.searchsorted(ordered, midpoints, side="left")
    above = len(ordered) - np.searchsorted(ordered, midpoints, side="right")
    return np.maximum(below, above).astype(float)


def private_range(
    xs,
    epsilon: float,
    tau: float,
    range_bound: float,
    rng: RandomSource,
) -> RangeInterval:
    """Epsilon-DP interval of width 4*tau likely to cover concentrated data.

    When tau >= range_bound a single bin covers the domain and the interval
    [-2*tau, 2*tau] is returned without consuming randomness.
    """
    values = np.asarray(xs, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("xs must be non-empty")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if tau <= 0 or range_bound <= 0:
        raise ValueError("tau and range_bound must be positive")
    if np.abs(values).max() > range_bound * (1.0 + 1e-9):
        raise ValueError("all xs must lie in [-range_bound, range_bound]")
    midpoints = bin_midpoints(tau, range_bound)
    if len(midpoints) == 1:
        center = midpoints[0]
        return RangeInterval(center - 2.0 * tau, center + 2.0 * tau)
    snapped = snap_to_midpoints(values, midpoints)
    costs = _side_costs(snapped, midpoints)
    winner = midpoints[exponential_mechanism(costs, epsilon, rng)]
    return RangeInterval(winner - 2.0 * tau, winner + 2.0 * tau)
