"""Empirical verification harness.

Brute-force oracles for the Hadamard transform and the exponential
mechanism, a statistical ratio test for differential privacy on tiny
instances, and log-log scaling regressions. The ratio test is a necessary
condition, not a proof: it histograms two output distributions on
neighboring datasets and checks the worst likelihood ratio after a
Wilson-interval slack.

Oracles here exist for tests only and must never be imported by the
estimation modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy import stats

from .core import RandomSource, UserDataset, neighboring

_MIN_TRIALS = 10_000


def hadamard_oracle(dim: int) -> np.ndarray:
    """Dense Hadamard matrix of order dim, built by naive doubling.

    Only small powers of two (dim <= 16) are supported; production code
    uses the fast transform and this matrix only cross-checks it.
    """
    if dim < 1 or dim > 16 or (dim & (dim - 1)) != 0:
        raise ValueError(f"dim must be a power of two in [1, 16], got {dim}")
    h = np.array([[1.0]])
    while h.shape[0] < dim:
        h = np.block([[h, h], [h, -h]])
    return h


def exp_mech_oracle(costs, epsilon: float) -> np.ndarray:
    """Exact selection probabilities exp(-eps*c/2)/Z for each cost."""
    c = np.asarray(costs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("costs must be a non-empty 1-D sequence")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    w = np.exp(-0.5 * epsilon * (c - c.min()))
    return w / w.sum()


@dataclass(frozen=True)
class AuditReport:
    """Outcome of a DP ratio audit."""

    mechanism: str
    eps: float
    delta: float
    trials: int
    max_ratio: float
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _wilson_bounds(counts: np.ndarray, total: int, z: float) -> tuple[np.ndarray, np.ndarray]:
    p = counts / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = (z / denom) * np.sqrt(p * (1 - p) / total + z * z / (4 * total * total))
    return np.maximum(center - half, 0.0), np.minimum(center + half, 1.0)


def _discretize(outputs_a: list, outputs_b: list, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Map both output samples onto shared discrete codes.

    Scalar outputs fall into ``bins`` equal-width bins over the pooled range
    plus two overflow bins. Tuple outputs (category, scalar) additionally
    key on the category.
    """
    is_tuple = isinstance(outputs_a[0], tuple)
    if is_tuple:
        cats_a = np.array([o[0] for o in outputs_a])
        cats_b = np.array([o[0] for o in outputs_b])
        vals_a = np.array([o[1] for o in outputs_a], dtype=float)
        vals_b = np.array([o[1] for o in outputs_b], dtype=float)
    else:
        cats_a = np.zeros(len(outputs_a), dtype=int)
        cats_b = np.zeros(len(outputs_b), dtype=int)
        vals_a = np.asarray(outputs_a, dtype=float)
        vals_b = np.asarray(outputs_b, dtype=float)
    pooled = np.concatenate([vals_a, vals_b])
    lo, hi = pooled.min(), pooled.max()
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    # Interior bins 1..bins from digitize; 0 and bins+1 are overflow.
    bin_a = np.digitize(vals_a, edges[1:-1]) + 1
    bin_b = np.digitize(vals_b, edges[1:-1]) + 1
    width = bins + 2
    cat_index = {c: i for i, c in enumerate(np.unique(np.concatenate([cats_a, cats_b])))}
    code_a = np.array([cat_index[c] for c in cats_a]) * width + bin_a
    code_b = np.array([cat_index[c] for c in cats_b]) * width + bin_b
    n_codes = len(cat_index) * width
    counts_a = np.bincount(code_a, minlength=n_codes)
    counts_b = np.bincount(code_b, minlength=n_codes)
    return counts_a, counts_b


def dp_ratio_audit(
    mechanism: Callable[[UserDataset, RandomSource], object],
    a: UserDataset,
    b: UserDataset,
    eps: float,
    delta: float,
    trials: int,
    rng: RandomSource,
    *,
    bins: int = 64,
    confidence: float = 0.99,
    slack_factor: float = 1.25,
    name: str | None = None,
) -> AuditReport:
    """Histogram-based likelihood-ratio test of the DP inequality.

    Runs the mechanism ``trials`` times on each of two neighboring datasets,
    discretizes the outputs onto shared bins, and reports the maximum over
    bins and both directions of (p_lower - delta) / q_upper, where
    p_lower/q_upper are Wilson bounds at the given confidence. PASS iff the
    maximum stays at or below exp(eps) * slack_factor.
    """
    if not neighboring(a, b):
        raise ValueError("audit requires neighboring datasets")
    if trials < _MIN_TRIALS:
        raise ValueError(f"trials must be at least {_MIN_TRIALS}, got {trials}")
    mech_name = name or getattr(mechanism, "__name__", "mechanism")
    streams_a = rng.split(trials)
    streams_b = rng.split(trials)
    outputs_a = [mechanism(a, s) for s in streams_a]
    outputs_b = [mechanism(b, s) for s in streams_b]
    counts_a, counts_b = _discretize(outputs_a, outputs_b, bins)
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    lo_a, hi_a = _wilson_bounds(counts_a, trials, z)
    lo_b, hi_b = _wilson_bounds(counts_b, trials, z)
    ratios_ab = (lo_a - delta) / hi_b
    ratios_ba = (lo_b - delta) / hi_a
    max_ratio = float(max(ratios_ab.max(), ratios_ba.max()))
    passed = max_ratio <= math.exp(eps) * slack_factor
    return AuditReport(
        mechanism=mech_name,
        eps=eps,
        delta=delta,
        trials=trials,
        max_ratio=max_ratio,
        passed=passed,
    )


@dataclass(frozen=True)
class ScalingFit:
    """Fitted log-log exponent for one axis."""

    slope: float
    stderr: float


def scaling_regression(results: Iterable[Mapping[str, float]]) -> dict[str, ScalingFit]:
    """Log-log least-squares exponents of error against n, m, and eps.

    Axes varying with at least two distinct values enter the regression;
    exponents are reported for axes with at least three. Raises ValueError
    when no axis has three grid points or any error is non-positive.
    """
    rows = list(results)
    if len(rows) < 3:
        raise ValueError("need at least three result rows")
    errors = np.array([float(r["error"]) for r in rows])
    if np.any(errors <= 0):
        raise ValueError("errors must be positive for a log-log fit")
    axes = {}
    for axis in ("n", "m", "eps"):
        if all(axis in r for r in rows):
            vals = np.array([float(r[axis]) for r in rows])
            if np.any(vals <= 0):
                raise ValueError(f"axis {axis} must be positive for a log-log fit")
            if len(np.unique(vals)) >= 2:
                axes[axis] = np.log(vals)
    reported = [ax for ax, v in axes.items() if len(np.unique(v)) >= 3]
    if not reported:
        raise ValueError("degenerate grid: no axis has three distinct values")
    names = list(axes)
    design = np.column_stack([axes[ax] for ax in names] + [np.ones(len(rows))])
    target = np.log(errors)
    coef, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    dof = len(rows) - design.shape[1]
    if dof > 0:
        resid = target - design @ coef
        sigma2 = float(resid @ resid) / dof
        cov = sigma2 * np.linalg.inv(design.T @ design)
        errs = np.sqrt(np.diag(cov))
    else:
        errs = np.full(design.shape[1], np.nan)
    return {ax: ScalingFit(float(coef[i]), float(errs[i])) for i, ax in enumerate(names) if ax in reported}
