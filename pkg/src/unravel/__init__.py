"""Lindblad master equations, their Wiener and Poisson unravelings, and the
nonlinear-functional statistics (second moments, trajectory entropy) whose
quadratic-variation corrections tell the unravelings apart."""

from .core import (
    LindbladModel,
    Measurement,
    TimeGrid,
    expectation,
    normalize,
    probabilities,
    projector_of,
)
from .ensemble import (
    ComparisonReport,
    EnsembleConfig,
    EnsembleStats,
    SecondMomentReport,
    compare_to_master,
    run_ensemble,
    second_moment_report,
    second_moment_validation,
)
from .errors import (
    BoundaryDivergence,
    DarkChannelJump,
    GridMismatch,
    ModelValidationError,
    StepTooLarge,
    TrajectoryError,
)
from .functionals import (
    EntropyCorrection,
    SecondMomentDrift,
    entropy,
    entropy_correction,
    f_functional,
    f_with_bookkeeping,
    probability_drift_wiener,
    probability_jump_coefficients,
    second_moment_drift,
    trajectory_entropy_series,
)
from .master import (
    MasterSolution,
    adjoint_lindbladian,
    integrate_master,
    lindbladian,
    measurement_entropy,
    von_neumann_entropy,
)
from .modelspec import parse_model, parse_model_data, preset_spec
from .poisson import apply_jump, jump_rates, pdp_drift, pdp_step, pdp_trajectory
from .trajectory import (
    ComplexNoiseIncrement,
    JumpEvent,
    TrajectoryRecord,
    split_seed,
    trajectory_rng,
    wiener_increments,
)
from .wiener import gp_diffusion, gp_drift, gp_step, gp_trajectory

__version__ = "0.1.0"

__all__ = [
    "BoundaryDivergence",
    "ComparisonReport",
    "ComplexNoiseIncrement",
    "DarkChannelJump",
    "EnsembleConfig",
    "EnsembleStats",
    "EntropyCorrection",
    "GridMismatch",
    "JumpEvent",
    "LindbladModel",
    "MasterSolution",
    "Measurement",
    "ModelValidationError",
    "SecondMomentDrift",
    "SecondMomentReport",
    "StepTooLarge",
    "TimeGrid",
    "TrajectoryError",
    "TrajectoryRecord",
    "adjoint_lindbladian",
    "apply_jump",
    "compare_to_master",
    "entropy",
    "entropy_correction",
    "expectation",
    "f_functional",
    "f_with_bookkeeping",
    "gp_diffusion",
    "gp_drift",
    "gp_step",
    "gp_trajectory",
    "integrate_master",
    "jump_rates",
    "lindbladian",
    "measurement_entropy",
    "normalize",
    "parse_model",
    "parse_model_data",
    "pdp_drift",
    "pdp_step",
    "pdp_trajectory",
    "preset_spec",
    "probabilities",
    "probability_drift_wiener",
    "probability_jump_coefficients",
    "projector_of",
    "run_ensemble",
    "second_moment_drift",
    "second_moment_report",
    "second_moment_validation",
    "split_seed",
    "trajectory_entropy_series",
    "trajectory_rng",
    "von_neumann_entropy",
    "wiener_increments",
]
