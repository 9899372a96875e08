"""Shared domain types: user-grouped datasets, privacy budgets, randomness.

A dataset is a collection of n users, each contributing a record of m items.
Privacy is accounted at user level: two datasets are neighbors when they
differ in at most one user's entire record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

BOUND_KINDS = ("linf", "l2")

# Relative slack for bound validation; absorbs float rounding from clipping.
_BOUND_RTOL = 1e-9


class BudgetExhaustedError(RuntimeError):
    """Raised when a query session has already spent its privacy budget."""


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) differential-privacy budget.

    Attributes:
        epsilon: privacy loss bound, finite and positive.
        delta: failure probability, in [0, 1).
    """

    epsilon: float
    delta: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.epsilon) or self.epsilon <= 0:
            raise ValueError(f"epsilon must be finite and positive, got {self.epsilon}")
        if not (0.0 <= self.delta < 1.0):
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True)
class ConcentrationSpec:
    """Promise that data are concentrated: with probability at least
    1 - gamma, every point lies within distance tau of a common center,
    inside a domain of scale range_bound.

    Attributes:
        tau: concentration radius, positive.
        gamma: failure probability, in (0, 1).
        range_bound: worst-case scale of the domain, positive.
        dim: dimension the promise refers to.
    """

    tau: float
    gamma: float
    range_bound: float
    dim: int = 1

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.range_bound <= 0:
            raise ValueError(f"range_bound must be positive, got {self.range_bound}")
        if self.dim < 1:
            raise ValueError(f"dim must be at least 1, got {self.dim}")
        # A radius beyond range_bound * sqrt(dim) makes clipping vacuous.
        if self.tau > self.range_bound * np.sqrt(self.dim):
            raise ValueError(
                f"tau={self.tau} exceeds range_bound*sqrt(dim)="
                f"{self.range_bound * np.sqrt(self.dim)}"
            )


class RandomSource:
    """Deterministic randomness with hierarchical stream splitting.

    The same seed with the same call sequence yields identical draws.
    ``split`` derives child sources that are pairwise independent by
    construction, so parallel trials remain reproducible regardless of
    scheduling.

    Attributes:
        generator: the underlying numpy Generator for raw draws.
    """

    def __init__(self, seed: int | None = None, *, _sequence: np.random.SeedSequence | None = None):
        if _sequence is None:
            _sequence = np.random.SeedSequence(seed)
        self._sequence = _sequence
        self.generator = np.random.Generator(np.random.PCG64(_sequence))

    @property
    def seed(self):
        """Entropy the source was seeded with (None for OS entropy)."""
        return self._sequence.entropy

    def split(self, count: int) -> list["RandomSource"]:
        """Derive ``count`` independent child sources."""
        if count < 1:
            raise ValueError(f"count must be at least 1, got {count}")
        return [RandomSource(_sequence=s) for s in self._sequence.spawn(count)]

    def child(self) -> "RandomSource":
        """Derive a single independent child source."""
        return self.split(1)[0]

    def __repr__(self) -> str:  # pragma: no cover
        return f"RandomSource(seed={self.seed!r})"


def _as_item_array(items, dim: int | None) -> np.ndarray:
    arr = np.asarray(items, dtype=float)
    if arr.ndim == 1 and dim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"user record must be a 2-D (items, dim) array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("every user must hold at least one item")
    return arr


@dataclass(frozen=True)
class UserDataset:
    """n user records, each an (m_u, dim) float array of items.

    bound_kind "linf": every coordinate lies in [-item_bound, item_bound].
    bound_kind "l2": every item's Euclidean norm is at most item_bound.
    The constructor rejects items violating the declared bound.
    """

    users: tuple[np.ndarray, ...]
    dim: int
    item_bound: float
    bound_kind: str = "linf"

    def __post_init__(self) -> None:
        if self.bound_kind not in BOUND_KINDS:
            raise ValueError(f"bound_kind must be one of {BOUND_KINDS}, got {self.bound_kind!r}")
        if self.item_bound < 0:
            raise ValueError(f"item_bound must be nonnegative, got {self.item_bound}")
        if self.dim < 1:
            raise ValueError(f"dim must be at least 1, got {self.dim}")
        if len(self.users) == 0:
            raise ValueError("dataset must contain at least one user")
        users = tuple(_as_item_array(u, self.dim) for u in self.users)
        object.__setattr__(self, "users", users)
        tol = self.item_bound * (1.0 + _BOUND_RTOL)
        for i, rec in enumerate(users):
            if rec.shape[1] != self.dim:
                raise ValueError(f"user {i} has items of length {rec.shape[1]}, expected dim={self.dim}")
            if not np.all(np.isfinite(rec)):
                raise ValueError(f"user {i} holds non-finite items")
            if self.bound_kind == "linf":
                worst = np.abs(rec).max()
            else:
                worst = np.sqrt((rec**2).sum(axis=1)).max()
            if worst > tol:
                raise ValueError(
                    f"user {i} violates the {self.bound_kind} bound {self.item_bound} (worst {worst})"
                )

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def item_counts(self) -> np.ndarray:
        return np.array([rec.shape[0] for rec in self.users])

    def common_item_count(self) -> int:
        """Items per user when uniform; raises ValueError otherwise."""
        counts = self.item_counts
        m = int(counts[0])
        if not np.all(counts == m):
            raise ValueError("estimator requires the same number of items per user")
        return m

    def stacked(self) -> np.ndarray:
        """All records as an (n, m, dim) array; requires uniform item count."""
        self.common_item_count()
        return np.stack(self.users)

    def per_user_means(self) -> np.ndarray:
        """(n, dim) array of each user's item average."""
        counts = self.item_counts
        if np.all(counts == counts[0]):
            return np.stack(self.users).mean(axis=1)
        return np.stack([rec.mean(axis=0) for rec in self.users])

    def subset(self, indices: Sequence[int] | range) -> "UserDataset":
        """Dataset restricted to the given user indices."""
        picked = tuple(self.users[i] for i in indices)
        return UserDataset(picked, self.dim, self.item_bound, self.bound_kind)

    def replace_user(self, index: int, items) -> "UserDataset":
        """Copy with one user's entire record swapped out."""
        users = list(self.users)
        users[index] = _as_item_array(items, self.dim)
        return UserDataset(tuple(users), self.dim, self.item_bound, self.bound_kind)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "bound": self.item_bound,
            "bound_kind": self.bound_kind,
            "users": [rec.tolist() for rec in self.users],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, payload: dict) -> "UserDataset":
        return cls(
            users=tuple(np.asarray(u, dtype=float) for u in payload["users"]),
            dim=int(payload["dim"]),
            item_bound=float(payload["bound"]),
            bound_kind=payload.get("bound_kind", "linf"),
        )

    @classmethod
    def from_json(cls, text: str) -> "UserDataset":
        return cls.from_dict(json.loads(text))


def scalar_dataset(values: Iterable[float], bound: float) -> UserDataset:
    """One-item scalar users; user-level neighbors then differ in one value."""
    vals = np.asarray(list(values), dtype=float)
    return UserDataset(tuple(np.array([[v]]) for v in vals), dim=1, item_bound=bound)


def neighboring(a: UserDataset, b: UserDataset) -> bool:
    """True iff the datasets differ in at most one user's entire record.

    Requires matching dimension and user count; raises ValueError otherwise.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.n_users != b.n_users:
        raise ValueError(f"user count mismatch: {a.n_users} vs {b.n_users}")
    differing = 0
    for rec_a, rec_b in zip(a.users, b.users):
        if rec_a.shape != rec_b.shape or not np.array_equal(rec_a, rec_b):
            differing += 1
            if differing > 1:
                return False
    return True
