"""User-level differentially private estimation and learning.

Privacy here is counted per user, not per item: neighboring datasets
differ in one user's entire record. The package covers private range and
mean estimation (scalar, rotated high-dimensional, per-user averaged),
first-order private optimization with localization, phased ERM for
stochastic convex optimization, pure-epsilon finite-class selection,
synthetic benchmark data, and an empirical audit harness.
"""

from .core import (
    BOUND_KINDS,
    BudgetExhaustedError,
    ConcentrationSpec,
    PrivacyBudget,
    RandomSource,
    UserDataset,
    neighboring,
    scalar_dataset,
)
from .mechanisms import (
    CompositionPlan,
    exponential_mechanism,
    inverse_laplace_cdf,
    per_step_budget_for_queries,
    sample_laplace,
    strong_composition,
)
from .range_estimation import RangeInterval, bin_midpoints, private_range, snap_to_midpoints
from .mean import (
    AdaptiveQuerySession,
    MeanEstimate,
    RotationMatrixSpec,
    adaptive_query_session,
    fwht,
    rotate,
    rotate_inverse,
    user_level_bounded_mean,
    winsorized_mean_1d,
    winsorized_mean_highd,
)
from .optimize import (
    FeasibleSet,
    LocalizationConfig,
    LocalizationSchedule,
    LossModel,
    OptimizerState,
    gradient_concentration_radius,
    gradient_mapping,
    localization_schedule,
    localize_strongly_convex,
    project,
    sgd_convex,
    sgd_nonconvex,
    sgd_strongly_convex,
    winsorized_first_order,
)
from .sco import PhasePlan, PhaseSpec, PlanInfeasibleError, build_phase_plan, phased_erm
from .select import (
    HypothesisClass,
    SelectionResult,
    default_tau_for_selection,
    private_select,
    select_from_cover,
)
from .synth import (
    DistributionSpec,
    HeterogeneitySpec,
    make_loss,
    population_mean,
    sample_truncated_gaussian,
    sample_user_dataset,
)
from .audit import (
    AuditReport,
    ScalingFit,
    dp_ratio_audit,
    exp_mech_oracle,
    hadamard_oracle,
    scaling_regression,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveQuerySession",
    "AuditReport",
    "BOUND_KINDS",
    "BudgetExhaustedError",
    "CompositionPlan",
    "ConcentrationSpec",
    "DistributionSpec",
    "FeasibleSet",
    "HeterogeneitySpec",
    "HypothesisClass",
    "LocalizationConfig",
    "LocalizationSchedule",
    "LossModel",
    "MeanEstimate",
    "OptimizerState",
    "PhasePlan",
    "PhaseSpec",
    "PlanInfeasibleError",
    "PrivacyBudget",
    "RandomSource",
    "RangeInterval",
    "RotationMatrixSpec",
    "ScalingFit",
    "SelectionResult",
    "UserDataset",
    "adaptive_query_session",
    "bin_midpoints",
    "default_tau_for_selection",
    "dp_ratio_audit",
    "exp_mech_oracle",
    "exponential_mechanism",
    "fwht",
    "gradient_concentration_radius",
    "gradient_mapping",
    "hadamard_oracle",
    "inverse_laplace_cdf",
    "localization_schedule",
    "localize_strongly_convex",
    "make_loss",
    "neighboring",
    "per_step_budget_for_queries",
    "phased_erm",
    "build_phase_plan",
    "population_mean",
    "private_range",
    "private_select",
    "project",
    "rotate",
    "rotate_inverse",
    "sample_laplace",
    "sample_truncated_gaussian",
    "sample_user_dataset",
    "scalar_dataset",
    "scaling_regression",
    "select_from_cover",
    "sgd_convex",
    "sgd_nonconvex",
    "sgd_strongly_convex",
    "snap_to_midpoints",
    "strong_composition",
    "user_level_bounded_mean",
    "winsorized_first_order",
    "winsorized_mean_1d",
    "winsorized_mean_highd",
]
