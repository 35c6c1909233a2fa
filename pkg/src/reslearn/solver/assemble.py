"""Assembly of the soft-constraint LP used for noisy second-layer learning."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatchError
from ..numerics import as_matrix
from .types import LpProblem


def build_slack_lp(xs, ys, d: int | None = None, m: int | None = None) -> LpProblem:
    """LP relaxing the feasibility system C y - x >= 0 with per-entry slacks.

    minimize (1/n) sum_ij zeta_ij  subject to  (C y_i - x_i)_j >= -zeta_ij,
    zeta >= 0. Noiseless data admits zeta = 0, so a positive optimum is
    direct evidence of noise or model misfit.

    Variable layout: C flattened row-major (d*m entries), then the slacks in
    sample-major order (zeta_ij at position d*m + i*d + j). Constraint rows
    follow the same sample-major order. The build is dense, n*d rows by
    d*m + n*d columns, and is meant for desk-scale problems; the learners
    assemble the per-row equivalents instead of calling this at full size.
    """
    xs = as_matrix(xs, "xs")
    ys = as_matrix(ys, "ys")
    n = xs.shape[0]
    if ys.shape[0] != n:
        raise DimensionMismatchError(f"{n} inputs but {ys.shape[0]} outputs")
    if d is not None and d != xs.shape[1]:
        raise DimensionMismatchError(f"xs has width {xs.shape[1]}, caller said d={d}")
    if m is not None and m != ys.shape[1]:
        raise DimensionMismatchError(f"ys has width {ys.shape[1]}, caller said m={m}")
    d = xs.shape[1]
    m = ys.shape[1]

    n_c = d * m
    n_vars = n_c + n * d
    lhs = np.zeros((n * d, n_vars))
    for j in range(d):
        lhs[j::d, j * m : (j + 1) * m] = ys
    np.fill_diagonal(lhs[:, n_c:], 1.0)
    objective = np.zeros(n_vars)
    objective[n_c:] = 1.0 / n
    return LpProblem(
        objective=objective,
        ineq_lhs=lhs,
        ineq_rhs=xs.reshape(-1),
        nonneg_vars=tuple(range(n_c, n_vars)),
    )
