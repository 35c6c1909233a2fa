"""Second-layer learning: recover B from (x, y) samples.

The key identity is that C = B's left inverse satisfies C y = (A x)^+ + x,
so the row-separable program

    min (1/2n) sum_i || xi_i + x_i - C y_i ||^2   s.t. xi_i >= 0

(or its feasibility/slack LP forms) recovers C together with nonparametric
estimates xi_i of the hidden ReLU output. Rows whose first-layer weights
are a pure rescaling of the input coordinate admit a one-parameter family
of solutions C B = diag(k); the rescale step detects those rows by the
exact linearity of [C y]_j against x_j on the negative half-line and
divides the scale back out before B is read off by least squares.

All three program forms decouple across the d rows of C, so the QP path
solves one batched program per layer (shared factorization) and the LP
paths run one small simplex per row.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DimensionMismatchError,
    IllConditionedError,
    RankDeficientError,
    SingularCHatError,
    SingularMatrixError,
    SolverFailedError,
)
from .methods import ConvexMethod
from .model import SampleSet
from .numerics import Mat, invert, lls_solve
from .solver import LpProblem, QpProblem, SolverConfig, SolveStatus
from .solver.simplex import solve_lp
from .solver.split_ls import solve_separable_ls


class Layer2Path(str, Enum):
    UNIQUE = "unique"
    GENERAL_RESCALED = "general_rescaled"


@dataclass(frozen=True)
class RescaleConfig:
    """Controls the scale-row detector.

    A row is accepted as scale-equivalent (and its factor divided out) only
    when the origin-line fit of [C y]_j on x_j over negative x_j leaves a
    mean squared residual at most ``eps_tol`` times the sample variance of
    [C y]_j; otherwise the factor stays 1. Rows with fewer than
    ``min_neg_samples`` negative samples are left untouched as well.

    The default tolerance leaves room for the QP path, whose tie-break
    lands a hair off the pure-multiple segment; genuinely coupled rows
    measure orders of magnitude above it either way.

    Slopes within ``shrink_tol`` of 1 are treated as exactly 1: a row whose
    factor is that close to unity needs no correction, and dividing by a
    noisy near-unit estimate would push an already-correct solution off the
    constraint surface by the estimation error.
    """

    eps_tol: float = 1e-3
    min_neg_samples: int = 10
    k_min: float = 1e-4
    shrink_tol: float = 1e-2

    def __post_init__(self):
        if self.eps_tol <= 0:
            raise ValueError("eps_tol must be positive")
        if not 0.0 <= self.shrink_tol < 1.0:
            raise ValueError("shrink_tol must be in [0, 1)")


@dataclass(frozen=True)
class Layer2Estimate:
    """Result of second-layer learning.

    ``xi_hat`` stacks the per-sample hidden-output estimates as rows (n x
    d). ``k_hat`` holds the per-row scale factors actually divided out (all
    ones when nothing was detected). ``notes`` carries human-readable
    diagnostics: underdetermination warnings, rescale gate decisions, and
    path fallbacks.
    """

    c_hat: Mat
    b_hat: Mat
    xi_hat: Mat
    k_hat: np.ndarray
    used_path: Layer2Path
    notes: tuple[str, ...] = ()


# --- program assembly ----------------------------------------------------

def build_row_qp(samples: SampleSet, row: int) -> QpProblem:
    """QP for one row of C: variables [c_row (m, free) | xi_row (n, >= 0)].

    The Hessian is (1/n) T'T with T = [-Y | I_n]; it is shared by every row
    of the same sample set, which is what the batched learner exploits.
    """
    ys = samples.ys
    n, m = ys.shape
    x_j = samples.xs[:, row]
    t_top = np.hstack([ys.T @ ys, -ys.T])
    t_bot = np.hstack([-ys, np.eye(n)])
    hessian = np.vstack([t_top, t_bot]) / n
    linear = np.concatenate([-ys.T @ x_j, x_j]) / n
    return QpProblem(
        hessian=hessian,
        linear=linear,
        nonneg_vars=tuple(range(m, m + n)),
        constant=float(x_j @ x_j) / (2 * n),
        var_layout={"c_row": (0, m), "xi_row": (m, m + n)},
    )


def build_row_feasibility_lp(samples: SampleSet, row: int) -> LpProblem:
    """Feasibility system for one row of C:  Y c >= x_j, c free."""
    return LpProblem(
        objective=np.zeros(samples.m),
        ineq_lhs=samples.ys,
        ineq_rhs=samples.xs[:, row],
    )


def build_row_slack_lp(samples: SampleSet, row: int) -> LpProblem:
    """Soft feasibility for one row: min (1/n) sum zeta, Y c + zeta >= x_j."""
    ys = samples.ys
    n, m = ys.shape
    lhs = np.hstack([ys, np.eye(n)])
    objective = np.concatenate([np.zeros(m), np.full(n, 1.0 / n)])
    return LpProblem(
        objective=objective,
        ineq_lhs=lhs,
        ineq_rhs=samples.xs[:, row],
        nonneg_vars=tuple(range(m, m + n)),
    )


# --- learning ------------------------------------------------------------

def _solve_c_qp(samples: SampleSet, cfg: SolverConfig) -> tuple[Mat, Mat]:
    # QP objective written as 1/2||(-Y)c + xi - (-x)||^2 per row of C, which
    # is the eliminated-form shape solved by solve_separable_ls.
    coeffs, xi, info = solve_separable_ls(-samples.ys, -samples.xs, cfg)
    if not info["converged"]:
        raise SolverFailedError(
            f"layer-2 QP did not converge in {info['iterations']} iterations "
            f"(KKT tolerance {info['kkt_tol']:.1e})"
        )
    return coeffs.T.copy(), xi


def _solve_c_lp(samples: SampleSet, cfg: SolverConfig, slack: bool) -> tuple[Mat, Mat, list[str]]:
    ys, xs = samples.ys, samples.xs
    n, m = ys.shape
    d = xs.shape[1]
    c_hat = np.zeros((d, m))
    xi_hat = np.zeros((n, d))
    notes: list[str] = []
    for j in range(d):
        report = solve_lp(build_row_feasibility_lp(samples, j), cfg)
        if slack and report.status is SolveStatus.INFEASIBLE:
            # Only an infeasible system leaves the slack program real work;
            # when the plain feasibility program closes every constraint the
            # slack optimum is exactly zero at the same point, and skipping
            # the slack solve avoids the heavily degenerate zero-objective
            # simplex run that entails.
            report = solve_lp(build_row_slack_lp(samples, j), cfg)
        if report.status is not SolveStatus.OPTIMAL:
            raise SolverFailedError(
                f"layer-2 LP for row {j} ended with status {report.status.value}: "
                f"{report.message}"
            )
        c_hat[j] = report.point[:m]
        residual = ys @ c_hat[j] - xs[:, j]
        if slack:
            value = float(np.maximum(-residual, 0.0).mean())
            if value > cfg.feas_tol * 100:
                notes.append(f"row {j}: slack objective {value:.3e} (noisy fit)")
            residual = np.maximum(residual, 0.0)
        xi_hat[:, j] = residual
    return c_hat, xi_hat, notes


def rescale_layer2(samples: SampleSet, c_hat: Mat, cfg: RescaleConfig | None = None) -> np.ndarray:
    """Per-row scale factors of c_hat, detected on the negative half-lines.

    For a scale-equivalent row j, [C y]_j equals k_j x_j exactly whenever
    x_j < 0, so the through-origin regression has residual ~0 and its slope
    is the factor. Any appreciable residual means the row is genuinely
    coupled, and the factor defaults to 1.
    """
    cfg = cfg or RescaleConfig()
    xs = samples.xs
    cy = samples.ys @ np.asarray(c_hat).T
    d = xs.shape[1]
    if np.asarray(c_hat).shape[0] != d:
        raise DimensionMismatchError(
            f"c_hat has {np.asarray(c_hat).shape[0]} rows, samples have d={d}"
        )
    k_hat = np.ones(d)
    for j in range(d):
        neg = xs[:, j] < 0
        count = int(neg.sum())
        if count < cfg.min_neg_samples:
            warnings.warn(
                f"row {j}: only {count} negative samples, scale factor left at 1",
                stacklevel=2,
            )
            continue
        x_neg = xs[neg, j]
        cy_neg = cy[neg, j]
        denom = float(x_neg @ x_neg)
        if denom <= 0.0:
            continue
        slope = float(x_neg @ cy_neg) / denom
        mse = float(np.mean((cy_neg - slope * x_neg) ** 2))
        spread = float(np.var(cy_neg))
        if mse > cfg.eps_tol * max(spread, 1e-30):
            continue  # gate: residual too large, not a scale row
        if slope < cfg.k_min:
            warnings.warn(
                f"row {j}: degenerate scale estimate {slope:.3e}, left at 1",
                stacklevel=2,
            )
            continue
        if slope >= 1.0 - cfg.shrink_tol:
            continue  # no detectable shrink; dividing would only add noise
        k_hat[j] = min(slope, 1.0)
    return k_hat


def recover_b_general(samples: SampleSet, c_hat: Mat, k_hat) -> Mat:
    """Least-squares fit of y on the scale-corrected projection diag(1/k) C y."""
    k = np.asarray(k_hat, dtype=np.float64).reshape(-1)
    if np.any(k <= 0):
        raise ValueError("scale factors must be strictly positive")
    corrected = np.asarray(c_hat) / k[:, None]
    design = samples.ys @ corrected.T
    try:
        fit = lls_solve(design, samples.ys)
    except RankDeficientError as exc:
        sv = np.linalg.svd(design, compute_uv=False)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        raise SingularCHatError(
            f"projected samples are rank deficient; cannot recover layer 2: {exc}",
            condition=cond,
        ) from exc
    return fit.coeffs


def learn_layer2(
    samples: SampleSet,
    method: ConvexMethod | str = ConvexMethod.QP,
    solver_cfg: SolverConfig | None = None,
    rescale_cfg: RescaleConfig | None = None,
    assume_unique: bool = False,
) -> Layer2Estimate:
    """Estimate C and B from samples; see the module docstring for the model.

    ``assume_unique`` opts into the shortcut path for square, known
    non-scale teachers: skip rescaling and invert C directly. If C turns
    out singular the general path is used instead of failing.
    """
    method = ConvexMethod.parse(method)
    solver_cfg = solver_cfg or SolverConfig()
    notes: list[str] = []
    d, m, n = samples.d, samples.m, samples.n
    if m < d:
        raise DimensionMismatchError(
            f"outputs must have at least input dimension: m={m} < d={d}"
        )
    if n < d:
        notes.append(f"underdetermined: n={n} < d={d}, estimate unreliable")
        warnings.warn(notes[-1], stacklevel=2)

    if method is ConvexMethod.QP:
        c_hat, xi_hat = _solve_c_qp(samples, solver_cfg)
    else:
        c_hat, xi_hat, lp_notes = _solve_c_lp(
            samples, solver_cfg, slack=method is ConvexMethod.SLACK_LP
        )
        notes.extend(lp_notes)

    if assume_unique and m == d:
        try:
            b_hat = invert(c_hat)
            return Layer2Estimate(
                c_hat=c_hat,
                b_hat=b_hat,
                xi_hat=xi_hat,
                k_hat=np.ones(d),
                used_path=Layer2Path.UNIQUE,
                notes=tuple(notes),
            )
        except (SingularMatrixError, IllConditionedError) as exc:
            notes.append(f"direct inversion failed ({exc}); falling back to rescaled path")
    elif assume_unique:
        notes.append(f"unique path needs m == d (got m={m}, d={d}); using rescaled path")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        k_hat = rescale_layer2(samples, c_hat, rescale_cfg)
    notes.extend(str(w.message) for w in caught)

    b_hat = recover_b_general(samples, c_hat, k_hat)
    corrected_c = c_hat / k_hat[:, None]
    corrected_xi = (xi_hat + samples.xs) / k_hat[None, :] - samples.xs
    if method is ConvexMethod.SLACK_LP:
        corrected_xi = np.maximum(corrected_xi, 0.0)
    return Layer2Estimate(
        c_hat=corrected_c,
        b_hat=b_hat,
        xi_hat=corrected_xi,
        k_hat=k_hat,
        used_path=Layer2Path.GENERAL_RESCALED,
        notes=tuple(notes),
    )
