"""Randomly relaxed projection methods for stochastic fixed point problems.

The iteration core builds a half-space cut each step and applies a relaxed
projection with a randomly drawn relaxation, which may exceed 2 when its
damping E[lam (2 - lam)] stays nonnegative.  On top of that core sit a
relaxed fixed point driver with stochastic errors, a stochastic gradient
method, and an extrapolated randomly activated block-iterative solver for
common fixed point and feasibility problems, together with the signal and
image restoration experiments.
"""

from .block import (
    MAX_RESIDUAL_CONCENTRATED,
    UNIFORM_OVER_BATCH,
    BlockConfig,
    BlockIterationRecord,
    BlockResult,
    compute_weights,
    extrapolation_parameter,
    run_block,
)
from .diagnostics import (
    RunSummary,
    aggregate_runs,
    bin_by_elapsed,
    estimate_reference_solution,
    fejer_audit,
    normalized_error_db,
)
from .experiments import (
    ImageProblem,
    SignalProblem,
    canonical_strategies,
    desk_image_problem,
    desk_signal_problem,
    generate_image_problem,
    generate_signal_problem,
    iterations_to_db,
    run_experiment,
)
from .exceptions import (
    ConfigurationError,
    DegenerateConstraintError,
    InvariantViolationError,
    NumericError,
    ReferenceSolutionError,
    UsageError,
)
from .fixedpoint import (
    DecayingNoise,
    GradientFamily,
    KmConfig,
    SgdConfig,
    ZeroErrors,
    quadratic_family,
    run_km,
    run_km_averaged,
    run_sgd,
)
from .geometry import (
    CutStep,
    HalfSpaceCut,
    apply_update,
    compute_cut_step,
    fejer_decrement,
)
from .operators import (
    FqneOperator,
    InequalityConstraint,
    OperatorFamily,
    box_projector,
    fourier_support_projector,
    halfspace_projector,
    hyperslab_projector,
    project_box,
    project_fourier_support,
    project_hyperslab,
    sample_index,
    subgradient_projector,
    subgradient_projector_operator,
    symmetrize_fourier_mask,
)
from .relaxation import (
    Constant,
    RelaxationMoments,
    RelaxationStrategy,
    TwoPoint,
    UniformInterval,
    moments,
    sample,
    strategy_from_config,
    strategy_label,
    validate_for_algorithm,
)
from .trace import ConvergenceTrace, read_trace_csv

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
