"""Convex-program engines: dense two-phase simplex and operator-splitting QP."""

from .admm import solve_nonneg_qp_batch, solve_qp
from .assemble import build_slack_lp
from .simplex import solve_lp
from .types import (
    LpProblem,
    QpProblem,
    SolveReport,
    SolveStatus,
    SolverConfig,
    load_problem,
    problem_from_json,
    problem_to_json,
    save_problem,
)

__all__ = [
    "LpProblem",
    "QpProblem",
    "SolveReport",
    "SolveStatus",
    "SolverConfig",
    "build_slack_lp",
    "load_problem",
    "problem_from_json",
    "problem_to_json",
    "save_problem",
    "solve_lp",
    "solve_nonneg_qp_batch",
    "solve_qp",
]
