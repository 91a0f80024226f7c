"""Single-pass streaming Nystrom sketching for kernel ridge regression.

The package maintains a small dictionary of kernel columns through
leverage-score-driven shrink/expand sampling, estimates leverage scores and
the effective dimension incrementally from the sketch itself, and ships a
desk-scale verification harness for the reconstruction and risk guarantees.
"""

from .errors import InputError, InvariantViolation, NumericalError
from .evaluation import (
    CheckpointRecord,
    ConditionReport,
    FixedDesignProblem,
    MonotonicityReport,
    SyntheticSpec,
    check_condition,
    fixed_design_risk,
    generate_synthetic,
    monotonicity_audit,
    psi_gap,
    rebuild_factor,
    risk_ratio_bound,
    verify_checkpoints,
)
from .kernels import (
    Dataset,
    KernelColumn,
    KernelSpec,
    evaluate,
    gram,
    load_csv,
    load_libsvm,
    pairwise,
    stream_column,
)
from .leverage import (
    Diagnostics,
    EstimatedProfile,
    LeverageProfile,
    alpha_factor,
    beta_factor,
    clamp_probabilities,
    deff_increment_exact,
    estimate_deff_increment,
    estimate_rls,
    exact_rls,
    update_deff,
)
from .linalg import (
    EigPair,
    eig_pairs,
    psd_order_check,
    regularized_solve,
    spectral_norm,
)
from .nystrom import NystromFactor, Selection, build_selection, krr_approx, krr_exact, nystrom_approx
from .pipeline import (
    AccessAudit,
    EstimateOracle,
    ExactOracle,
    RunCheckpoint,
    RunResult,
    SketchState,
    batch_exact,
    ink_estimate_run,
    ink_oracle_run,
    ink_step,
    initial_state,
    suggest_batch_m,
    suggest_q_bar,
)
from .sampling import Dictionary, RngHandle, direct_sample, selection_weights, shrink_expand

__version__ = "0.1.0"

__all__ = [
    "AccessAudit",
    "CheckpointRecord",
    "ConditionReport",
    "Dataset",
    "Diagnostics",
    "Dictionary",
    "EigPair",
    "EstimateOracle",
    "EstimatedProfile",
    "ExactOracle",
    "FixedDesignProblem",
    "InputError",
    "InvariantViolation",
    "KernelColumn",
    "KernelSpec",
    "LeverageProfile",
    "MonotonicityReport",
    "NumericalError",
    "NystromFactor",
    "RngHandle",
    "RunCheckpoint",
    "RunResult",
    "Selection",
    "SketchState",
    "SyntheticSpec",
    "alpha_factor",
    "batch_exact",
    "beta_factor",
    "build_selection",
    "check_condition",
    "clamp_probabilities",
    "deff_increment_exact",
    "direct_sample",
    "eig_pairs",
    "estimate_deff_increment",
    "estimate_rls",
    "evaluate",
    "exact_rls",
    "fixed_design_risk",
    "generate_synthetic",
    "gram",
    "ink_estimate_run",
    "ink_oracle_run",
    "ink_step",
    "initial_state",
    "krr_approx",
    "krr_exact",
    "load_csv",
    "load_libsvm",
    "monotonicity_audit",
    "nystrom_approx",
    "pairwise",
    "psd_order_check",
    "psi_gap",
    "rebuild_factor",
    "regularized_solve",
    "risk_ratio_bound",
    "selection_weights",
    "shrink_expand",
    "spectral_norm",
    "stream_column",
    "suggest_batch_m",
    "suggest_q_bar",
    "update_deff",
    "verify_checkpoints",
]
