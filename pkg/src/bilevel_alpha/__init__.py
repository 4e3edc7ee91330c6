"""Learning regularization parameters by bilevel optimization, with positivity checks."""

from .bilevel import (
    AlphaGrid,
    BilevelSolution,
    Dataset,
    TrainingPair,
    check_condition_gradient_compat,
    check_condition_new_expected,
    check_condition_new_pointwise,
    check_condition_old,
    check_condition_predictive,
    check_condition_symmetric_bregman,
    closed_form_tikhonov_alpha,
    dini_quotients,
    estimate_dini_derivative,
    grid_search,
    tikhonov_denoising_optimum,
    upper_cost,
)
from .errors import (
    BilevelError,
    ConfigError,
    ConvergenceError,
    DegenerateDataError,
    InputError,
    PreconditionError,
    RankDeficiencyError,
)
from .linops import BLUR_2X2, ForwardOperator, StructuredOperator, gaussian_kernel
from .regularizers import LinearMap, Regularizer
from .varsolve import (
    INFINITY_PROXY,
    LowerLevelProblem,
    SolverSettings,
    boundary_continuity_probe,
    least_squares,
    solve,
    solve_batch,
    verify_optimality_identity,
)

__version__ = "0.1.0"
