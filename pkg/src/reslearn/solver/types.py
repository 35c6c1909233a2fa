"""Problem descriptions and reports shared by the LP and QP engines.

Conventions used throughout the solver package:

* ``LpProblem`` encodes  min objective . v  subject to  ineq_lhs @ v >= ineq_rhs,
  with the variables listed in ``nonneg_vars`` additionally constrained >= 0
  and all remaining variables free. An all-zero objective turns solve_lp into
  a pure feasibility run.
* ``QpProblem`` encodes  min 1/2 v' H v + q . v  subject to v_i >= 0 for the
  indices in ``nonneg_vars``; there are no general linear constraints because
  the layer programs only ever bound the function-estimate block.
* Problems serialize to JSON (dense nested lists) so individual solves can be
  replayed or cross-checked against an external solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from ..errors import DimensionMismatchError
from ..numerics import Mat, as_matrix, is_psd


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_TROUBLE = "numerical_trouble"


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration budgets for both engines.

    The QP engine is an over-relaxed operator-splitting method with an
    active-set polish; ``rho``/``sigma``/``alpha`` are its penalty,
    regularization, and relaxation parameters. The LP engine is a dense
    two-phase simplex; ``bland_after`` bounds how many consecutive
    degenerate pivots are tolerated before switching to Bland's rule.
    """

    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    stat_tol: float = 1e-6
    max_iter: int = 20_000
    # QP engine knobs
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho: bool = True
    max_refactor: int = 10
    polish: bool = True
    polish_rounds: int = 3
    check_interval: int = 25
    # LP engine knobs
    pivot_tol: float = 1e-9
    bland_after: int = 64

    def with_(self, **kwargs) -> "SolverConfig":
        return replace(self, **kwargs)


def _as_vector(value, name: str, length: int | None = None) -> np.ndarray:
    vec = np.asarray(value, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{name} contains non-finite entries")
    if length is not None and vec.shape[0] != length:
        raise DimensionMismatchError(f"{name} has length {vec.shape[0]}, expected {length}")
    return vec


def _check_indices(indices, n_vars: int, name: str) -> tuple[int, ...]:
    out = tuple(int(i) for i in indices)
    for i in out:
        if not 0 <= i < n_vars:
            raise ValueError(f"{name} index {i} out of range for {n_vars} variables")
    if len(set(out)) != len(out):
        raise ValueError(f"{name} contains duplicate indices")
    return out


@dataclass(frozen=True)
class QpProblem:
    """min 1/2 v' hessian v + linear . v + constant, s.t. v[i] >= 0 for i in
    nonneg_vars.

    ``constant`` carries the data-dependent offset of least-squares
    objectives so that objective_value matches the modeled risk (zero at a
    perfect noiseless fit) instead of a shifted copy of it.
    """

    hessian: Mat
    linear: np.ndarray
    nonneg_vars: tuple[int, ...] = ()
    constant: float = 0.0
    var_layout: dict = field(default_factory=dict)

    def __post_init__(self):
        h = as_matrix(self.hessian, "hessian")
        if h.shape[0] != h.shape[1]:
            raise DimensionMismatchError(f"hessian must be square, got {h.shape}")
        if not is_psd(h, tol=1e-8):
            raise ValueError("hessian is not positive semidefinite within 1e-8")
        q = _as_vector(self.linear, "linear", h.shape[0])
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "linear", q)
        object.__setattr__(
            self, "nonneg_vars", _check_indices(self.nonneg_vars, h.shape[0], "nonneg_vars")
        )

    @property
    def n_vars(self) -> int:
        return self.hessian.shape[0]

    def objective(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        return float(0.5 * v @ self.hessian @ v + self.linear @ v + self.constant)


@dataclass(frozen=True)
class LpProblem:
    """min objective . v  s.t.  ineq_lhs @ v >= ineq_rhs, v[nonneg_vars] >= 0."""

    objective: np.ndarray
    ineq_lhs: Mat
    ineq_rhs: np.ndarray
    nonneg_vars: tuple[int, ...] = ()

    def __post_init__(self):
        lhs = as_matrix(self.ineq_lhs, "ineq_lhs")
        if lhs.shape[0] < 1:
            raise DimensionMismatchError("need at least one inequality row")
        obj = _as_vector(self.objective, "objective", lhs.shape[1])
        rhs = _as_vector(self.ineq_rhs, "ineq_rhs", lhs.shape[0])
        object.__setattr__(self, "ineq_lhs", lhs)
        object.__setattr__(self, "objective", obj)
        object.__setattr__(self, "ineq_rhs", rhs)
        object.__setattr__(
            self, "nonneg_vars", _check_indices(self.nonneg_vars, lhs.shape[1], "nonneg_vars")
        )

    @property
    def n_vars(self) -> int:
        return self.ineq_lhs.shape[1]

    @property
    def n_rows(self) -> int:
        return self.ineq_lhs.shape[0]

    def max_violation(self, v: np.ndarray) -> float:
        """Largest constraint violation of v (0 when feasible)."""
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        gap = self.ineq_rhs - self.ineq_lhs @ v
        worst = float(gap.max(initial=0.0))
        if self.nonneg_vars:
            worst = max(worst, float(-v[list(self.nonneg_vars)].min(initial=0.0)))
        return max(worst, 0.0)


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one solve.

    ``dual`` carries the multipliers of the nonnegativity bounds for QPs and
    of the inequality rows for LPs. ``certificate`` is only set on infeasible
    LPs: a ray lam >= 0 with lhs' lam vanishing on free variables,
    nonpositive on bounded ones, and rhs . lam > 0, proving that no feasible
    point exists.
    """

    point: np.ndarray
    objective_value: float
    max_infeasibility: float
    iterations: int
    status: SolveStatus
    dual: np.ndarray | None = None
    certificate: np.ndarray | None = None
    message: str = ""


# --- JSON round-trip -----------------------------------------------------

def problem_to_json(problem) -> str:
    if isinstance(problem, QpProblem):
        payload = {
            "type": "qp",
            "hessian": problem.hessian.tolist(),
            "linear": problem.linear.tolist(),
            "nonneg_vars": list(problem.nonneg_vars),
            "constant": problem.constant,
            "var_layout": {k: list(v) for k, v in problem.var_layout.items()},
        }
    elif isinstance(problem, LpProblem):
        payload = {
            "type": "lp",
            "objective": problem.objective.tolist(),
            "ineq_lhs": problem.ineq_lhs.tolist(),
            "ineq_rhs": problem.ineq_rhs.tolist(),
            "nonneg_vars": list(problem.nonneg_vars),
        }
    else:
        raise TypeError(f"cannot serialize {type(problem).__name__}")
    return json.dumps(payload)


def problem_from_json(text: str):
    payload = json.loads(text)
    kind = payload.get("type")
    if kind == "qp":
        return QpProblem(
            hessian=np.array(payload["hessian"], dtype=np.float64),
            linear=np.array(payload["linear"], dtype=np.float64),
            nonneg_vars=tuple(payload["nonneg_vars"]),
            constant=float(payload.get("constant", 0.0)),
            var_layout={k: tuple(v) for k, v in payload.get("var_layout", {}).items()},
        )
    if kind == "lp":
        return LpProblem(
            objective=np.array(payload["objective"], dtype=np.float64),
            ineq_lhs=np.array(payload["ineq_lhs"], dtype=np.float64),
            ineq_rhs=np.array(payload["ineq_rhs"], dtype=np.float64),
            nonneg_vars=tuple(payload["nonneg_vars"]),
        )
    raise ValueError(f"unknown problem type {kind!r}")


def save_problem(path, problem) -> None:
    Path(path).write_text(problem_to_json(problem))


def load_problem(path):
    return problem_from_json(Path(path).read_text())
