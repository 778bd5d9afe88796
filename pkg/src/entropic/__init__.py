"""Fit exponential-form models by Maximum Likelihood, Maximum Entropy and MiniMax Entropy."""

from .analysis import (
    HessianReport,
    complementarity_check,
    derivative_audit,
    entropy_sweep,
    fd_check,
    hessian_me,
    hessian_ml_general,
    hessian_ml_simple,
    identity_check,
)
from .model import (
    EmpiricalSample,
    ExponentialModel,
    PotentialSet,
    SupportGrid,
    discretize_continuous,
    entropy,
    log_likelihood,
    model_moment,
    moment_gap,
    normalize,
    sample_moment,
)
from .potential import DualValue, PotentialExpr, eval, eval_dual, parse_potential  # noqa: A004
from .solvers import (
    SolveReport,
    SolverConfig,
    foc_residuals,
    solve_me_simple,
    solve_minimax_ent,
    solve_ml_general,
    solve_ml_simple,
)

__all__ = [
    "DualValue", "EmpiricalSample", "ExponentialModel", "HessianReport", "PotentialExpr", "PotentialSet",
    "SolveReport", "SolverConfig", "SupportGrid", "complementarity_check", "derivative_audit",
    "discretize_continuous", "entropy", "entropy_sweep", "eval", "eval_dual", "fd_check", "foc_residuals",
    "hessian_me", "hessian_ml_general", "hessian_ml_simple", "identity_check", "log_likelihood",
    "model_moment", "moment_gap", "normalize", "parse_potential", "sample_moment", "solve_me_simple",
    "solve_minimax_ent", "solve_ml_general", "solve_ml_simple",
]
