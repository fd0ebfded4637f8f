"""Conditional quantile trajectories for snippet data.

Monotone longitudinal processes observed only as short per-subject snippets
are summarized as (level, slope) pairs; the conditional distribution of slope
given level is estimated, inverted to quantile gradient functions, and
integrated into quantile trajectories. Includes forward prediction with a
quantile-level schedule, bootstrap difference bands, and a simulation
benchmark against a brute-force oracle.
"""

from ._version import __version__
from .conditional import (
    FIT_METHODS,
    BinnedCdf,
    ConditionalCdf,
    ConditionalMeanGradient,
    FitConfig,
    JointKernelCdf,
    KernelCdf,
    LogisticCdf,
    QuantileGradient,
    conditional_mean,
    fit_binned,
    fit_conditional_cdf,
    fit_joint_kernel,
    fit_kernel,
    fit_logistic,
    invert_to_quantile,
)
from .dynamics import (
    EXIT_COMPLETED,
    EXIT_GRADIENT_ERROR,
    EXIT_LEFT_SUPPORT,
    INTEGRATOR_METHODS,
    BandResult,
    FunctionGradient,
    IntegratorSpec,
    PredictionSchedule,
    SlopeField,
    TrajectorySolution,
    alpha_schedule,
    bootstrap_difference_bands,
    estimate_alpha_star,
    held_values_on_grid,
    integrate,
    local_discretization_error,
    mean_trajectory,
    prediction_trajectory,
    quantile_trajectory,
    s_grid,
    slope_field,
    values_on_grid,
)
from .errors import (
    DomainError,
    FitFailureError,
    InsufficientDataError,
    InsufficientLocalDataError,
    InversionFailureError,
    OracleRefinementError,
    QtrajError,
    SnippetParseError,
    SnippetValidationError,
)
from .kernels import (
    KERNEL_KINDS,
    KernelSpec,
    kernel_cdf,
    kernel_weights,
    silverman_bandwidth,
)
from .simulate import (
    NOISE_KINDS,
    AiseCell,
    AiseReport,
    OracleGradient,
    OracleTrajectory,
    Scenario,
    SimulatedData,
    SimulationConfig,
    aise_report_to_csv,
    aise_report_to_json_dict,
    decay_value,
    generate_snippets,
    oracle_gradient,
    oracle_quantile_trajectory,
    run_aise_benchmark,
)
from .snippets import (
    Exclusion,
    LevelSlopePair,
    Snippet,
    SnippetDataset,
    build_dataset,
    extract_level_slope,
    parse_records,
    read_pairs_csv,
    read_snippets_csv,
    reduce_snippets,
    resample_pairs,
    write_pairs_csv,
    write_snippets_csv,
)

__all__ = [
    "__version__",
    "AiseCell",
    "AiseReport",
    "BandResult",
    "BinnedCdf",
    "ConditionalCdf",
    "ConditionalMeanGradient",
    "DomainError",
    "EXIT_COMPLETED",
    "EXIT_GRADIENT_ERROR",
    "EXIT_LEFT_SUPPORT",
    "Exclusion",
    "FIT_METHODS",
    "FitConfig",
    "FitFailureError",
    "FunctionGradient",
    "INTEGRATOR_METHODS",
    "InsufficientDataError",
    "InsufficientLocalDataError",
    "IntegratorSpec",
    "InversionFailureError",
    "JointKernelCdf",
    "KERNEL_KINDS",
    "KernelCdf",
    "KernelSpec",
    "LevelSlopePair",
    "LogisticCdf",
    "NOISE_KINDS",
    "OracleGradient",
    "OracleRefinementError",
    "OracleTrajectory",
    "PredictionSchedule",
    "QtrajError",
    "QuantileGradient",
    "Scenario",
    "SimulatedData",
    "SimulationConfig",
    "SlopeField",
    "Snippet",
    "SnippetDataset",
    "SnippetParseError",
    "SnippetValidationError",
    "TrajectorySolution",
    "aise_report_to_csv",
    "aise_report_to_json_dict",
    "alpha_schedule",
    "bootstrap_difference_bands",
    "build_dataset",
    "conditional_mean",
    "decay_value",
    "estimate_alpha_star",
    "extract_level_slope",
    "fit_binned",
    "fit_conditional_cdf",
    "fit_joint_kernel",
    "fit_kernel",
    "fit_logistic",
    "generate_snippets",
    "held_values_on_grid",
    "integrate",
    "invert_to_quantile",
    "kernel_cdf",
    "kernel_weights",
    "local_discretization_error",
    "mean_trajectory",
    "oracle_gradient",
    "oracle_quantile_trajectory",
    "parse_records",
    "prediction_trajectory",
    "quantile_trajectory",
    "read_pairs_csv",
    "read_snippets_csv",
    "reduce_snippets",
    "resample_pairs",
    "run_aise_benchmark",
    "s_grid",
    "silverman_bandwidth",
    "slope_field",
    "values_on_grid",
    "write_pairs_csv",
    "write_snippets_csv",
]
