"""Synthetic data generators and benchmark loss models.

Three item families cover the experiments: uniform draws from a norm ball,
coordinate- or radially-clipped Gaussians, and finite atom mixtures.
Heterogeneous populations mix a base family with a contaminant per item,
which keeps every user's distribution within total variation eta of the
base. Loss constructors return LossModel instances with vectorized batch
hooks and per-user gradient fast paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from .core import BOUND_KINDS, RandomSource, UserDataset
from .optimize import LossModel

FAMILIES = ("bounded_ball", "truncated_gaussian", "finite_support")


def _kind_norm(points: np.ndarray, kind: str) -> np.ndarray:
    """Per-row norm of an (k, d) block under the named bound kind."""
    if kind == "l2":
        return np.linalg.norm(points, axis=-1)
    return np.abs(points).max(axis=-1)


@dataclass(frozen=True)
class DistributionSpec:
    """One item distribution; samples always respect bound under bound_kind.

    bounded_ball draws uniformly from the radius-`radius` ball around mean
    (radius defaults to bound); truncated_gaussian clips N(mean, sigma^2)
    draws back to the bound, coordinate-wise for linf and radially for l2;
    finite_support draws atoms with the given weights.
    """

    family: str
    dim: int
    bound: float
    bound_kind: str = "linf"
    mean: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    radius: Optional[float] = None
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.dim < 1:
            raise ValueError(f"dim must be at least 1, got {self.dim}")
        if not (self.bound > 0 and math.isfinite(self.bound)):
            raise ValueError(f"bound must be positive, got {self.bound}")
        if self.bound_kind not in BOUND_KINDS:
            raise ValueError(f"bound_kind must be one of {BOUND_KINDS}")
        tol = 1.0 + 1e-9
        if self.family == "finite_support":
            if self.atoms is None:
                raise ValueError("finite_support requires atoms")
            atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
            if atoms.shape[1] != self.dim:
                raise ValueError(f"atoms must have {self.dim} columns")
            if _kind_norm(atoms, self.bound_kind).max() > self.bound * tol:
                raise ValueError("every atom must respect the bound")
            if self.weights is None:
                weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
            else:
                weights = np.asarray(self.weights, dtype=float)
                if weights.shape != (atoms.shape[0],) or weights.min() < 0:
                    raise ValueError("weights must be nonnegative, one per atom")
                if abs(weights.sum() - 1.0) > 1e-9:
                    raise ValueError("weights must sum to 1")
                weights = weights / weights.sum()
            object.__setattr__(self, "atoms", atoms)
            object.__setattr__(self, "weights", weights)
            return
        mean = np.zeros(self.dim) if self.mean is None else np.asarray(self.mean, dtype=float)
        if mean.shape != (self.dim,):
            raise ValueError(f"mean must have shape ({self.dim},)")
        object.__setattr__(self, "mean", mean)
        if self.family == "bounded_ball":
            radius = self.bound if self.radius is None else float(self.radius)
            if radius <= 0:
                raise ValueError(f"radius must be positive, got {radius}")
            reach = _kind_norm(mean[None, :], self.bound_kind)[0] + radius
            if reach > self.bound * tol:
                raise ValueError("mean offset plus radius must stay within the bound")
            object.__setattr__(self, "radius", radius)
        else:
            if self.sigma is None:
                raise ValueError("truncated_gaussian requires sigma")
            sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (self.dim,)).copy()
            if sigma.min() < 0:
                raise ValueError("sigma must be nonnegative")
            object.__setattr__(self, "sigma", sigma)

    def to_dict(self) -> dict:
        out = {
            "family": self.family,
            "dim": self.dim,
            "bound": self.bound,
            "bound_kind": self.bound_kind,
        }
        if self.family == "finite_support":
            out["atoms"] = self.atoms.tolist()
            out["weights"] = self.weights.tolist()
        else:
            out["mean"] = self.mean.tolist()
            if self.family == "bounded_ball":
                out["radius"] = self.radius
            else:
                out["sigma"] = self.sigma.tolist()
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "DistributionSpec":
        kwargs = dict(payload)
        for key in ("mean", "sigma", "atoms", "weights"):
            if kwargs.get(key) is not None:
                kwargs[key] = np.asarray(kwargs[key], dtype=float)
        return cls(**kwargs)


@dataclass(frozen=True)
class HeterogeneitySpec:
    """Per-item mixture (1-eta)*base + eta*contaminant.

    Every user's item distribution is then within total variation eta of
    the base distribution. Base and contaminant must share dim, bound and
    bound_kind so the induced dataset has a single declared bound.
    """

    base: DistributionSpec
    contaminant: DistributionSpec
    eta: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        same = (
            self.base.dim == self.contaminant.dim
            and self.base.bound == self.contaminant.bound
            and self.base.bound_kind == self.contaminant.bound_kind
        )
        if not same:
            raise ValueError("base and contaminant must share dim, bound and bound_kind")

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def bound(self) -> float:
        return self.base.bound

    @property
    def bound_kind(self) -> str:
        return self.base.bound_kind

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "contaminant": self.contaminant.to_dict(),
            "eta": self.eta,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "HeterogeneitySpec":
        return cls(
            base=DistributionSpec.from_dict(payload["base"]),
            contaminant=DistributionSpec.from_dict(payload["contaminant"]),
            eta=float(payload["eta"]),
        )


def sample_truncated_gaussian(
    mean, sigma, bound: float, count: int, rng: RandomSource, clip: str = "linf"
) -> np.ndarray:
    """Gaussian draws clipped back to the bound: z/max(1, |z|/B) per
    coordinate for linf, or a radial pull-back onto the l2 ball."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if not (bound > 0 and math.isfinite(bound)):
        raise ValueError(f"bound must be positive, got {bound}")
    if clip not in BOUND_KINDS:
        raise ValueError(f"clip must be one of {BOUND_KINDS}")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), mean.shape)
    if sigma.min() < 0:
        raise ValueError("sigma must be nonnegative")
    draws = mean + sigma * rng.generator.standard_normal((count, mean.size))
    if clip == "linf":
        return np.clip(draws, -bound, bound)
    norms = np.linalg.norm(draws, axis=1)
    scale = np.minimum(1.0, bound / np.maximum(norms, 1e-300))
    return draws * scale[:, None]


def _sample_spec(spec: DistributionSpec, count: int, rng: RandomSource) -> np.ndarray:
    gen = rng.generator
    if spec.family == "finite_support":
        idx = gen.choice(spec.atoms.shape[0], size=count, p=spec.weights)
        return spec.atoms[idx]
    if spec.family == "truncated_gaussian":
        return sample_truncated_gaussian(
            spec.mean, spec.sigma, spec.bound, count, rng, clip=spec.bound_kind
        )
    if spec.bound_kind == "linf":
        return spec.mean + gen.uniform(-spec.radius, spec.radius, size=(count, spec.dim))
    directions = gen.standard_normal((count, spec.dim))
    directions /= np.maximum(np.linalg.norm(directions, axis=1), 1e-300)[:, None]
    radii = spec.radius * gen.random(count) ** (1.0 / spec.dim)
    return spec.mean + directions * radii[:, None]


def sample_user_dataset(
    spec: Union[DistributionSpec, HeterogeneitySpec],
    n: int,
    m: int,
    rng: RandomSource,
) -> UserDataset:
    """n users, m i.i.d. items each; heterogeneous specs contaminate every
    item independently with probability eta."""
    if n < 1 or m < 1:
        raise ValueError(f"need n, m >= 1, got n={n}, m={m}")
    total = n * m
    if isinstance(spec, HeterogeneitySpec):
        base_points = _sample_spec(spec.base, total, rng)
        if spec.eta > 0.0:
            contaminated = _sample_spec(spec.contaminant, total, rng)
            mask = rng.generator.random(total) < spec.eta
            points = np.where(mask[:, None], contaminated, base_points)
        else:
            points = base_points
    else:
        points = _sample_spec(spec, total, rng)
    users = tuple(points.reshape(n, m, spec.dim))
    return UserDataset(
        users=users, dim=spec.dim, item_bound=spec.bound, bound_kind=spec.bound_kind
    )


def population_mean(
    spec: Union[DistributionSpec, HeterogeneitySpec],
    mc_draws: int = 200_000,
    mc_seed: int = 0x5EED,
) -> np.ndarray:
    """Population mean of the item distribution.

    Exact for bounded_ball, finite_support, and coordinate-clipped
    Gaussians; the radially clipped Gaussian has no closed form and falls
    back to a fixed-seed Monte Carlo average over mc_draws samples.
    """
    if isinstance(spec, HeterogeneitySpec):
        base = population_mean(spec.base, mc_draws, mc_seed)
        cont = population_mean(spec.contaminant, mc_draws, mc_seed)
        return (1.0 - spec.eta) * base + spec.eta * cont
    if spec.family == "bounded_ball":
        return spec.mean.copy()
    if spec.family == "finite_support":
        return spec.weights @ spec.atoms
    if spec.bound_kind == "linf":
        from scipy.stats import norm

        mu, sig, b = spec.mean, spec.sigma, spec.bound
        out = np.empty(spec.dim)
        for j in range(spec.dim):
            if sig[j] == 0.0:
                out[j] = min(max(mu[j], -b), b)
                continue
            alpha = (-b - mu[j]) / sig[j]
            beta = (b - mu[j]) / sig[j]
            out[j] = (
                -b * norm.cdf(alpha)
                + b * norm.sf(beta)
                + mu[j] * (norm.cdf(beta) - norm.cdf(alpha))
                - sig[j] * (norm.pdf(beta) - norm.pdf(alpha))
            )
        return out
    draws = sample_truncated_gaussian(
        spec.mean, spec.sigma, spec.bound, mc_draws, RandomSource(mc_seed), clip="l2"
    )
    return draws.mean(axis=0)


def make_loss(
    kind: str,
    *,
    gradient_bound: Optional[float] = None,
    feature_bound: Optional[float] = None,
) -> LossModel:
    """Benchmark losses.

    linear: l(theta; z) = -<theta, z>, gradient_bound = sup ||z||_2.
    quadratic: l(theta; z) = ||theta - z||^2 / 2, gradient_bound =
    sup ||theta - z||_2 over the feasible set and data.
    logistic: items are (x, y) with y in {-1, +1} appended as the last
    coordinate and ||x||_2 <= feature_bound.
    """
    if kind == "linear":
        if gradient_bound is None or gradient_bound <= 0:
            raise ValueError("linear loss requires a positive gradient_bound")

        def linear_factory(data: UserDataset):
            negated_means = -data.per_user_means()
            return lambda theta: negated_means

        return LossModel(
            evaluate=lambda theta, z: -float(np.dot(theta, z)),
            gradient=lambda theta, z: -np.asarray(z, dtype=float),
            lipschitz_G=float(gradient_bound),
            smoothness_H=0.0,
            strong_convexity_mu=0.0,
            convex=True,
            evaluate_batch=lambda theta, items: -np.asarray(items, dtype=float) @ np.asarray(theta, dtype=float),
            gradient_batch=lambda theta, items: -np.asarray(items, dtype=float),
            user_gradient_factory=linear_factory,
        )
    if kind == "quadratic":
        if gradient_bound is None or gradient_bound <= 0:
            raise ValueError("quadratic loss requires a positive gradient_bound")

        def quad_eval_batch(theta, items):
            gaps = np.asarray(theta, dtype=float) - np.asarray(items, dtype=float)
            return 0.5 * np.einsum("ij,ij->i", gaps, gaps)

        def quad_factory(data: UserDataset):
            user_means = data.per_user_means()
            return lambda theta: np.asarray(theta, dtype=float)[None, :] - user_means

        return LossModel(
            evaluate=lambda theta, z: 0.5 * float(np.sum((np.asarray(theta) - np.asarray(z)) ** 2)),
            gradient=lambda theta, z: np.asarray(theta, dtype=float) - np.asarray(z, dtype=float),
            lipschitz_G=float(gradient_bound),
            smoothness_H=1.0,
            strong_convexity_mu=1.0,
            convex=True,
            evaluate_batch=quad_eval_batch,
            gradient_batch=lambda theta, items: np.asarray(theta, dtype=float) - np.asarray(items, dtype=float),
            user_gradient_factory=quad_factory,
        )
    if kind == "logistic":
        if feature_bound is None or feature_bound <= 0:
            raise ValueError("logistic loss requires a positive feature_bound")

        def logistic_eval(theta, z):
            z = np.asarray(z, dtype=float)
            margin = z[-1] * float(np.dot(theta, z[:-1]))
            return float(np.logaddexp(0.0, -margin))

        def logistic_grad(theta, z):
            z = np.asarray(z, dtype=float)
            x, y = z[:-1], z[-1]
            margin = y * float(np.dot(theta, x))
            return -y * expit(-margin) * x

        def logistic_eval_batch(theta, items):
            items = np.asarray(items, dtype=float)
            margins = items[:, -1] * (items[:, :-1] @ np.asarray(theta, dtype=float))
            return np.logaddexp(0.0, -margins)

        def logistic_grad_batch(theta, items):
            items = np.asarray(items, dtype=float)
            x, y = items[:, :-1], items[:, -1]
            margins = y * (x @ np.asarray(theta, dtype=float))
            return (-y * expit(-margins))[:, None] * x

        return LossModel(
            evaluate=logistic_eval,
            gradient=logistic_grad,
            lipschitz_G=float(feature_bound),
            smoothness_H=float(feature_bound) ** 2 / 4.0,
            strong_convexity_mu=0.0,
            convex=True,
            evaluate_batch=logistic_eval_batch,
            gradient_batch=logistic_grad_batch,
        )
    raise ValueError(f"kind must be linear, quadratic or logistic, got {kind!r}")
