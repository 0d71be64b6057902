"""Killed distribution-dependent SDEs: particle Picard solver, boundary-reservoir
transport distances, coupling-by-projection and change-of-measure diagnostics."""

__version__ = "0.1.0"

from .acceptance import acceptance_suite, criterion_ids
from .coefficients import (
    CoefficientField,
    expression_field,
    field_names,
    make_field,
    validate_hypotheses,
)
from .config import ExperimentConfig, load_config
from .coupling import (
    BOTH_ALIVE,
    FIRST_DEAD,
    SECOND_DEAD,
    ProjectionCoupling,
    boundary_decay_check,
    build_projection_coupling,
    pw_bound_terms,
)
from .errors import (
    AmbiguousProjectionError,
    ConfigError,
    DomainViolationError,
    EvaluationError,
    IndeterminateRatioError,
    InvalidArgumentError,
    KmvError,
    NonConvergenceError,
    ResolutionError,
    SingularDiffusionError,
)
from .geometry import Domain, boundary_distance, in_band, project_to_boundary
from .girsanov import (
    ReweightedEnsemble,
    effective_sample_size,
    moment_bound_check,
    moment_ratio_profile,
    reweight_flow,
    v_contraction_check,
)
from .harness import run_experiment
from .measures import (
    LyapunovV,
    MeasureFlow,
    SubProbMeasure,
    first_moment,
    integrate,
    lpq_norm,
    quadratic_lyapunov,
    restrict_to_O,
)
from .picard import (
    DirichletTestFunction,
    PicardConfig,
    contraction_profile,
    estimate_contraction,
    fokker_planck_residual,
    picard_solve,
    select_theta,
)
from .sde import (
    FREEZE,
    GATED,
    ParticleEnsemble,
    RunResult,
    constant_flow,
    ensemble_from_measure,
    simulate_flow,
    step_killed,
    step_noise,
)
from .transport import (
    TransportPlan,
    flow_metric,
    w1,
    w1_hat,
    weighted_variation,
    zero_measure,
)

__all__ = [
    "Domain",
    "boundary_distance",
    "project_to_boundary",
    "in_band",
    "SubProbMeasure",
    "MeasureFlow",
    "LyapunovV",
    "quadratic_lyapunov",
    "restrict_to_O",
    "integrate",
    "first_moment",
    "lpq_norm",
    "TransportPlan",
    "w1_hat",
    "w1",
    "weighted_variation",
    "flow_metric",
    "zero_measure",
    "CoefficientField",
    "make_field",
    "expression_field",
    "field_names",
    "validate_hypotheses",
    "ParticleEnsemble",
    "RunResult",
    "simulate_flow",
    "step_killed",
    "step_noise",
    "constant_flow",
    "ensemble_from_measure",
    "FREEZE",
    "GATED",
    "PicardConfig",
    "picard_solve",
    "contraction_profile",
    "estimate_contraction",
    "select_theta",
    "DirichletTestFunction",
    "fokker_planck_residual",
    "ReweightedEnsemble",
    "reweight_flow",
    "effective_sample_size",
    "v_contraction_check",
    "moment_ratio_profile",
    "moment_bound_check",
    "ProjectionCoupling",
    "build_projection_coupling",
    "pw_bound_terms",
    "boundary_decay_check",
    "BOTH_ALIVE",
    "SECOND_DEAD",
    "FIRST_DEAD",
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    "acceptance_suite",
    "criterion_ids",
    "KmvError",
    "DomainViolationError",
    "AmbiguousProjectionError",
    "InvalidArgumentError",
    "EvaluationError",
    "ResolutionError",
    "NonConvergenceError",
    "IndeterminateRatioError",
    "SingularDiffusionError",
    "ConfigError",
    "__version__",
]
