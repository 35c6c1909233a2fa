"""First-layer learning: recover A from (x, h) pairs with h ~ (A x)^+.

Because (t)^+ >= k t for every k in [0, 1], any row of the single-layer
model can only be learned up to a downward scaling by the convex programs

    min (1/2n) sum_i || phi_i + A x_i - h_i ||^2   s.t. phi_i >= 0
    find A                                         s.t. A x_i <= h_i

whose solutions approach k_j * (true row j). The scale is then identified
separately: whenever h_j > 0 the relation (learned row) . x = k_j h_j is
exactly linear, so a through-origin regression over the activated samples
recovers k_j, and dividing it out restores the row. This rescale runs
unconditionally (unlike the second layer's gated variant) because the
downscaling affects every teacher, not just special rows.

Both programs decouple across rows and share their quadratic term, so the
QP path is solved as one batch per layer. Rows too rarely activated to
support the regression are left at their raw scale and flagged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRowError, DimensionMismatchError, SolverFailedError
from .methods import ConvexMethod
from .numerics import Mat, as_matrix
from .solver import LpProblem, QpProblem, SolverConfig, SolveStatus
from .solver.simplex import solve_lp
from .solver.split_ls import solve_separable_ls


@dataclass
class HiddenSampleSet:
    """Inputs paired with (estimated) hidden ReLU outputs, both n x d.

    The hidden values may carry small negative solver slack when they come
    from an upstream estimate rather than the exact forward map.
    """

    xs: Mat
    hs: Mat

    def __post_init__(self):
        self.xs = as_matrix(self.xs, "xs")
        self.hs = as_matrix(self.hs, "hs")
        if self.xs.shape != self.hs.shape:
            raise DimensionMismatchError(
                f"xs is {self.xs.shape} but hs is {self.hs.shape}; both must be n x d"
            )
        if self.hs.min(initial=0.0) < -1e-6:
            raise ValueError(
                f"hidden outputs should be nonnegative up to slack, min={self.hs.min():.3e}"
            )

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]


@dataclass(frozen=True)
class RowScaleConfig:
    """Controls the per-row scale regression.

    A sample counts as activated when h_j exceeds ``activation_rel`` times
    the median |h_j| (an absolute zero test would misclassify near-zero
    estimates). Slopes outside (k_min, 1] by more than ``k_tol`` are
    clamped with a warning; fewer than ``min_pos_samples`` activated
    samples raise DegenerateRowError. ``soft_gate`` bounds the relative
    scale-regression residual above which the slack route stops trusting
    the hard feasibility vertex (see learn_layer1).
    """

    activation_rel: float = 1e-8
    min_pos_samples: int = 10
    k_min: float = 1e-4
    k_tol: float = 1e-6
    soft_gate: float = 1e-6


@dataclass(frozen=True)
class Layer1Estimate:
    """Result of first-layer learning.

    ``raw_a`` is the solver output before any scale correction; ``a_hat``
    is raw_a with each row divided by its factor and projected onto the
    nonnegative orthant (the teacher class); ``k_hat`` holds the factors.
    ``unscaled_rows`` lists rows whose factor could not be estimated.
    """

    a_hat: Mat
    k_hat: np.ndarray
    raw_a: Mat
    unscaled_rows: tuple[int, ...] = ()
    notes: tuple[str, ...] = ()


# --- program assembly ----------------------------------------------------

def build_hidden_row_qp(samples: HiddenSampleSet, row: int) -> QpProblem:
    """QP for one row of A: variables [a_row (d, free) | phi_row (n, >= 0)]."""
    xs = samples.xs
    n, d = xs.shape
    h_j = samples.hs[:, row]
    top = np.hstack([xs.T @ xs, xs.T])
    bot = np.hstack([xs, np.eye(n)])
    hessian = np.vstack([top, bot]) / n
    linear = np.concatenate([-xs.T @ h_j, -h_j]) / n
    return QpProblem(
        hessian=hessian,
        linear=linear,
        nonneg_vars=tuple(range(d, d + n)),
        constant=float(h_j @ h_j) / (2 * n),
        var_layout={"a_row": (0, d), "phi_row": (d, d + n)},
    )


def build_hidden_row_lp(samples: HiddenSampleSet, row: int) -> LpProblem:
    """Feasibility system for one row of A:  -X a >= -h_j, a free."""
    return LpProblem(
        objective=np.zeros(samples.d),
        ineq_lhs=-samples.xs,
        ineq_rhs=-samples.hs[:, row],
    )


def build_hidden_row_slack_lp(samples: HiddenSampleSet, row: int) -> LpProblem:
    """Soft variant for noisy hidden estimates: min (1/n) sum zeta,
    -X a + zeta >= -h_j, zeta >= 0."""
    xs = samples.xs
    n, d = xs.shape
    lhs = np.hstack([-xs, np.eye(n)])
    objective = np.concatenate([np.zeros(d), np.full(n, 1.0 / n)])
    return LpProblem(
        objective=objective,
        ineq_lhs=lhs,
        ineq_rhs=-samples.hs[:, row],
        nonneg_vars=tuple(range(d, d + n)),
    )


# --- learning ------------------------------------------------------------

def _scale_fit_misfit(xs: Mat, hs: Mat, raw_a: Mat, cfg: RowScaleConfig) -> float:
    """Worst relative residual of the per-row scale regressions.

    On clean hidden samples the relation (raw row) . x = k * h_j holds
    exactly over the activated samples of every row, so this is ~0 there
    and grows with label noise carried into h. The slack route uses it to
    decide whether the hard feasibility vertex still reflects the
    scaled-row structure.
    """
    worst = 0.0
    for j in range(raw_a.shape[0]):
        h_j = hs[:, j]
        active = h_j > cfg.activation_rel * float(np.median(np.abs(h_j)))
        if int(active.sum()) < cfg.min_pos_samples:
            continue
        h_act = h_j[active]
        response = xs[active] @ raw_a[j]
        denom = float(h_act @ h_act)
        if denom <= 0.0:
            continue
        slope = float(h_act @ response) / denom
        mse = float(np.mean((response - slope * h_act) ** 2))
        worst = max(worst, mse / max(float(np.var(response)), 1e-30))
    return worst


def estimate_row_scale(
    xs: Mat,
    hs: Mat,
    raw_row,
    row: int,
    cfg: RowScaleConfig | None = None,
) -> float:
    """Scale factor of one learned row, from activated samples only.

    Fits (raw_row . x) = k * h_j through the origin over the samples where
    h_j is meaningfully positive; by construction of the convex programs
    the relation is exact there, so the slope is the factor.
    """
    cfg = cfg or RowScaleConfig()
    xs = as_matrix(xs, "xs")
    hs = as_matrix(hs, "hs")
    raw = np.asarray(raw_row, dtype=np.float64).reshape(-1)
    h_j = hs[:, row]
    threshold = cfg.activation_rel * float(np.median(np.abs(h_j)))
    active = h_j > threshold
    count = int(active.sum())
    if count < cfg.min_pos_samples:
        raise DegenerateRowError(
            f"row {row}: only {count} activated samples "
            f"(need {cfg.min_pos_samples}) for the scale regression",
            row=row,
        )
    h_act = h_j[active]
    response = xs[active] @ raw
    denom = float(h_act @ h_act)
    if denom <= 0.0:
        raise DegenerateRowError(f"row {row}: activated h values are all zero", row=row)
    slope = float(h_act @ response) / denom
    if slope > 1.0 + cfg.k_tol:
        warnings.warn(
            f"row {row}: scale estimate {slope:.6f} above 1, clamped", stacklevel=2
        )
        slope = 1.0
    elif slope < cfg.k_min:
        warnings.warn(
            f"row {row}: scale estimate {slope:.3e} below {cfg.k_min:.0e}, clamped",
            stacklevel=2,
        )
        slope = cfg.k_min
    return min(slope, 1.0)


def learn_layer1(
    samples: HiddenSampleSet,
    method: ConvexMethod | str = ConvexMethod.QP,
    solver_cfg: SolverConfig | None = None,
    scale_cfg: RowScaleConfig | None = None,
) -> Layer1Estimate:
    """Estimate A from hidden samples; see the module docstring for the model."""
    method = ConvexMethod.parse(method)
    solver_cfg = solver_cfg or SolverConfig()
    scale_cfg = scale_cfg or RowScaleConfig()
    xs, hs = samples.xs, samples.hs
    n, d = xs.shape
    notes: list[str] = []
    if n < d:
        notes.append(f"underdetermined: n={n} < d={d}, estimate unreliable")
        warnings.warn(notes[-1], stacklevel=2)

    if method is ConvexMethod.QP:
        # QP objective is 1/2||X a + phi - h||^2 per row, the eliminated-form
        # shape solved by solve_separable_ls. The noiseless optimum here is a
        # whole segment of scaled rows; a stronger tie-break weight than the
        # solver default picks a landing depth whose cross-section is narrow
        # enough for the slope correction, and nothing downstream needs this
        # solve to hug the constraint surface.
        coeffs, _phi, info = solve_separable_ls(xs, hs, solver_cfg, back_weight=1e-6)
        if not info["converged"]:
            raise SolverFailedError(
                f"layer-1 QP did not converge in {info['iterations']} iterations "
                f"(KKT tolerance {info['kkt_tol']:.1e})"
            )
        raw_a = coeffs.T.copy()
    else:
        # a = 0 satisfies A x <= h outright (h >= 0), so the slack variant's
        # objective minimum is always zero and both LP routes share the
        # plain feasibility solve.
        raw_a = np.zeros((d, d))
        for j in range(d):
            report = solve_lp(build_hidden_row_lp(samples, j), solver_cfg)
            if report.status is not SolveStatus.OPTIMAL:
                raise SolverFailedError(
                    f"layer-1 LP for row {j} ended with status {report.status.value}: "
                    f"{report.message}"
                )
            raw_a[j] = report.point[:d]
        if method is ConvexMethod.SLACK_LP:
            misfit = _scale_fit_misfit(xs, hs, raw_a, scale_cfg)
            if misfit > scale_cfg.soft_gate:
                # Noise in h shrinks the feasible polytope sample by sample
                # and the simplex vertex lands at an extreme corner of it;
                # softening the constraints into one-sided penalties moves
                # the landing to the noise-averaged interior instead. On
                # clean samples the two answers agree (the misfit is ~0 and
                # the vertex is kept), so the slack route stays exact there.
                notes.append(
                    f"scale fit misfit {misfit:.2e} above gate; "
                    "soft penalties replace the feasibility vertex"
                )
                coeffs, _phi, info = solve_separable_ls(
                    xs, hs, solver_cfg, back_weight=1e-6
                )
                if not info["converged"]:
                    raise SolverFailedError(
                        f"layer-1 soft solve did not converge in "
                        f"{info['iterations']} iterations "
                        f"(KKT tolerance {info['kkt_tol']:.1e})"
                    )
                raw_a = coeffs.T.copy()

    k_hat = np.ones(d)
    unscaled: list[int] = []
    for j in range(d):
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                k_hat[j] = estimate_row_scale(xs, hs, raw_a[j], j, scale_cfg)
            notes.extend(str(w.message) for w in caught)
        except DegenerateRowError as exc:
            unscaled.append(j)
            notes.append(str(exc))
    a_hat = np.maximum(raw_a / k_hat[:, None], 0.0)
    return Layer1Estimate(
        a_hat=a_hat,
        k_hat=k_hat,
        raw_a=raw_a,
        unscaled_rows=tuple(unscaled),
        notes=tuple(notes),
    )
