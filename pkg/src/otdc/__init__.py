"""Optimal-transport data repair for conditional-independence constraints,
plus threshold-independent fairness metrics and score calibration."""

from .calibrate import CalibrationConfig, CalibrationResult, barycenter_map, geometric_repair, search_lambda
from .dist import (
    CIConstraint,
    ConditionalTable,
    DiscreteDistribution,
    Schema,
    ci_projection,
    ci_violation,
    conditional,
    conditional_mutual_information,
    empirical_distribution,
    marginal,
    parse_constraint,
    satisfies_ci,
)
from .evaluation import (
    MISSING,
    CorruptionSpec,
    DistortionReport,
    ExperimentReport,
    corrupted_schema,
    inject_corruption,
    run_experiment,
    statistical_distortion,
)
from .fairness import (
    MetricCurve,
    ScoreTable,
    auc,
    delta_xauc,
    dsp,
    metric_curve,
    metrics_panel,
    threshold_bias,
    xauc,
)
from .repair import (
    ProbabilisticCleaner,
    RepairProblem,
    RepairResult,
    apply_cleaner,
    apply_map,
    cleaner_from_plan,
    lift_unsaturated,
    solve_deterministic_map,
    solve_probabilistic_cleaner,
)
from .transport import (
    SinkhornConfig,
    SinkhornResult,
    TransportPlan,
    barycenter_1d,
    cost_matrix,
    exact_ot,
    hamming_cost,
    sinkhorn,
    sqeuclidean_cost,
    wasserstein_1d,
)

__all__ = [
    "CalibrationConfig",
    "CalibrationResult",
    "barycenter_map",
    "geometric_repair",
    "search_lambda",
    "CIConstraint",
    "ConditionalTable",
    "DiscreteDistribution",
    "Schema",
    "ci_projection",
    "ci_violation",
    "conditional",
    "conditional_mutual_information",
    "empirical_distribution",
    "marginal",
    "parse_constraint",
    "satisfies_ci",
    "MISSING",
    "CorruptionSpec",
    "DistortionReport",
    "ExperimentReport",
    "corrupted_schema",
    "inject_corruption",
    "run_experiment",
    "statistical_distortion",
    "MetricCurve",
    "ScoreTable",
    "auc",
    "delta_xauc",
    "dsp",
    "metric_curve",
    "metrics_panel",
    "threshold_bias",
    "xauc",
    "ProbabilisticCleaner",
    "RepairProblem",
    "RepairResult",
    "apply_cleaner",
    "apply_map",
    "cleaner_from_plan",
    "lift_unsaturated",
    "solve_deterministic_map",
    "solve_probabilistic_cleaner",
    "SinkhornConfig",
    "SinkhornResult",
    "TransportPlan",
    "barycenter_1d",
    "cost_matrix",
    "exact_ot",
    "hamming_cost",
    "sinkhorn",
    "sqeuclidean_cost",
    "wasserstein_1d",
]

__version__ = "0.1.0"
