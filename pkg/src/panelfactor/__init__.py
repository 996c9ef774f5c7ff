"""Principal-components estimation of large approximate factor models.

The package fits X = F Lambda' + e on T x N panels by truncated
singular-value decomposition in three normalizations (apc, pc, and a
soft-thresholded rpc), provides confidence intervals for factors,
loadings, and common components, selects the number of factors by
penalized criteria, supports linear restrictions on the loadings, and
ships a Monte-Carlo engine plus a CLI for round-tripping panels through
CSV and JSON.
"""

from .constrained import (
    ConstrainedFit,
    ConstraintSystem,
    build_restrictions,
    constrained_solve,
    parse_restriction_spec,
)
from .errors import (
    DataError,
    DegenerateGeometryError,
    DegenerateSpectrumError,
    DegenerateSystemError,
    InfeasibleConstraintsError,
    InvalidParameterError,
    NonConvergenceError,
    NonDistinctEigenvaluesError,
    NumericalError,
    PanelFactorError,
    UnstableDgpError,
)
from .estimators import (
    FactorDecomposition,
    PanelData,
    als_solve,
    apc_pc_relation,
    as_panel,
    common_component,
    estimate_apc,
    estimate_pc,
    estimate_rpc,
    ssr,
    standardize,
    suggest_gamma,
)
from .factor_count import (
    ICResult,
    default_rmax,
    penalty,
    penalty_gap,
    scree,
    select_r_ic,
    select_r_regularized,
)
from .inference import (
    ConfidenceInterval,
    CovarianceEstimates,
    ci_common,
    ci_factor,
    ci_loading,
    covariance_estimates,
    default_bandwidth,
    residual_matrix,
)
from .io import canonical_json, emit_report, ingest_csv, write_matrix_csv
from .linalg import dense_eigen_oracle, normalize_panel, svt, truncated_svd
from .rotations import (
    align_signs,
    q_analytic,
    q_empirical,
    rotation_matrix,
    rotation_set,
)
from .simulation import (
    DgpConfig,
    McReport,
    check_coverage,
    check_rate,
    check_selection,
    generate_panel,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "PanelFactorError", "DataError", "InvalidParameterError",
    "NumericalError", "DegenerateSpectrumError", "DegenerateSystemError",
    "DegenerateGeometryError", "NonDistinctEigenvaluesError",
    "NonConvergenceError", "InfeasibleConstraintsError", "UnstableDgpError",
    # panels and decompositions
    "PanelData", "FactorDecomposition", "standardize", "as_panel",
    "estimate_apc", "estimate_pc", "estimate_rpc", "als_solve",
    "common_component", "ssr", "suggest_gamma", "apc_pc_relation",
    # spectral building blocks
    "normalize_panel", "truncated_svd", "svt", "dense_eigen_oracle",
    # rotations
    "rotation_matrix", "rotation_set", "align_signs", "q_analytic",
    "q_empirical",
    # inference
    "CovarianceEstimates", "ConfidenceInterval", "default_bandwidth",
    "covariance_estimates", "residual_matrix", "ci_factor", "ci_loading",
    "ci_common",
    # rank selection
    "ICResult", "penalty", "default_rmax", "scree", "select_r_ic",
    "select_r_regularized", "penalty_gap",
    # restrictions
    "ConstraintSystem", "ConstrainedFit", "parse_restriction_spec",
    "build_restrictions", "constrained_solve",
    # simulation
    "DgpConfig", "McReport", "generate_panel", "check_rate",
    "check_coverage", "check_selection",
    # input and output
    "ingest_csv", "write_matrix_csv", "canonical_json", "emit_report",
]
