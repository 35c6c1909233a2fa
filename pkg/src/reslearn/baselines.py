"""Reference learners: orthant-restricted linear regression and plain SGD.

The residual unit is exactly linear on two input orthants: y = B x when
every coordinate of x is negative (the ReLU is dead) and y = B (A + I) x
when every coordinate is positive. The "vanilla" learner runs one linear
regression per orthant and solves the two fits against each other for A.
Its catch is sample hunger: the all-negative orthant has probability
2^-d under sign-symmetric inputs, so the expected samples needed grow as
d * 2^(d+1).

The SGD baseline trains both layers jointly on the squared output loss
with the fixed published hyperparameters; it exists to be compared
against, not tuned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficientError
from .model import SampleSet, make_rng
from .numerics import Mat, lls_solve


@dataclass(frozen=True)
class VanillaLrResult:
    """Outcome of the two-orthant regression.

    ``success`` is False when either orthant produced too few or
    rank-deficient samples; the weight fields are None in that case, and
    failure is an ordinary result (the success *rate* is the experimental
    quantity of interest).
    """

    a_hat: Mat | None
    b_hat: Mat | None
    n_neg_used: int
    n_pos_used: int
    success: bool


def vanilla_lr(samples: SampleSet) -> VanillaLrResult:
    """Fit B on all-negative inputs from the first half of the samples and
    B(A+I) on all-positive inputs from the second half, then solve for A."""
    xs, ys = samples.xs, samples.ys
    n, d = xs.shape
    half = n // 2
    neg_mask = np.all(xs[:half] < 0, axis=1)
    pos_mask = np.all(xs[half:] > 0, axis=1)
    n_neg = int(neg_mask.sum())
    n_pos = int(pos_mask.sum())
    try:
        b_fit = lls_solve(xs[:half][neg_mask], ys[:half][neg_mask])
        d_fit = lls_solve(xs[half:][pos_mask], ys[half:][pos_mask])
        b_hat = b_fit.coeffs
        # b_hat @ a_tilde = d_hat, solved as least squares in case m > d
        a_fit = lls_solve(b_hat, d_fit.coeffs)
    except RankDeficientError:
        return VanillaLrResult(None, None, n_neg, n_pos, success=False)
    a_hat = a_fit.coeffs.T - np.eye(d)
    return VanillaLrResult(a_hat, b_hat, n_neg, n_pos, success=True)


def expected_sample_bound(d: int) -> int:
    """Lower bound on the expected samples vanilla LR needs: d * 2^(d+1).

    Exact integer arithmetic; valid for any d >= 1 under inputs whose
    coordinates are sign-symmetric.
    """
    if d < 1:
        raise ValueError("dimension must be at least 1")
    return d * 2 ** (d + 1)


@dataclass(frozen=True)
class SgdConfig:
    """Mini-batch SGD hyperparameters.

    The learning rate decays per epoch as eta0 / (1 + gamma * epoch).
    ``init`` is either "gaussian" (entries N(0, init_scale^2), first layer
    clamped nonnegative at initialization only; the default scale 1 starts
    the student at the same magnitude the teacher weights are drawn at) or
    "teacher-perturbed" (start from ``teacher`` plus perturb_scale noise,
    useful for stationarity checks).
    """

    batch_size: int = 32
    epochs: int = 256
    eta0: float = 1e-3
    gamma: float = 1e-5
    seed: int = 0
    init: str = "gaussian"
    init_scale: float = 1.0
    teacher: tuple | None = None
    perturb_scale: float = 0.0


@dataclass(frozen=True)
class SgdResult:
    """Final weights plus the per-epoch trace (epoch, mean batch loss, eta).

    ``diverged`` flags a loss explosion past 1e6 times the initial loss;
    the trace is still returned up to the last finite epoch.
    """

    a_hat: Mat
    b_hat: Mat
    loss_trace: np.ndarray  # (epochs, 3): epoch, mean_loss, eta
    diverged: bool = False


def _sgd_init(cfg: SgdConfig, d: int, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
    if cfg.init == "gaussian":
        a = np.maximum(rng.normal(0.0, cfg.init_scale, size=(d, d)), 0.0)
        b = rng.normal(0.0, cfg.init_scale, size=(m, d))
        return a, b
    if cfg.init == "teacher-perturbed":
        if cfg.teacher is None:
            raise ValueError("teacher-perturbed init needs cfg.teacher = (a, b)")
        a0, b0 = cfg.teacher
        a = np.asarray(a0, dtype=np.float64).copy()
        b = np.asarray(b0, dtype=np.float64).copy()
        if cfg.perturb_scale > 0:
            a += rng.normal(0.0, cfg.perturb_scale, size=a.shape)
            b += rng.normal(0.0, cfg.perturb_scale, size=b.shape)
        return a, b
    raise ValueError(f"unknown init {cfg.init!r}")


def sgd_batch_gradients(
    a: Mat, b: Mat, xb: Mat, yb: Mat
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean squared-error loss over one batch and its gradients in (A, B).

    The ReLU subgradient at exactly zero is taken as zero. Exposed
    separately so the analytic gradients can be checked against finite
    differences.
    """
    bs = xb.shape[0]
    pre = xb @ a.T
    hid = np.maximum(pre, 0.0)
    inner = hid + xb
    resid = inner @ b.T - yb
    loss = 0.5 * float(np.sum(resid * resid)) / bs
    grad_b = resid.T @ inner / bs
    d_inner = resid @ b
    d_pre = d_inner * (pre > 0.0)
    grad_a = d_pre.T @ xb / bs
    return loss, grad_a, grad_b


def sgd_train(samples: SampleSet, cfg: SgdConfig | None = None) -> SgdResult:
    """Train (A, B) by mini-batch SGD; deterministic given cfg.seed."""
    cfg = cfg or SgdConfig()
    xs, ys = samples.xs, samples.ys
    n, d = xs.shape
    m = ys.shape[1]
    if n < cfg.batch_size:
        raise ValueError(f"need at least one full batch: n={n} < {cfg.batch_size}")
    rng = make_rng(cfg.seed)
    a, b = _sgd_init(cfg, d, m, rng)

    trace = np.zeros((cfg.epochs, 3))
    initial_loss = None
    diverged = False
    # overflow past the divergence threshold is detected, not anomalous
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            eta = cfg.eta0 / (1.0 + cfg.gamma * epoch)
            order = rng.permutation(n)
            epoch_losses = []
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                loss, grad_a, grad_b = sgd_batch_gradients(a, b, xs[idx], ys[idx])
                a -= eta * grad_a
                b -= eta * grad_b
                epoch_losses.append(loss)
            mean_loss = float(np.mean(epoch_losses))
            trace[epoch] = (epoch, mean_loss, eta)
            if initial_loss is None:
                initial_loss = max(mean_loss, 1e-300)
            if mean_loss > 1e6 * initial_loss:
                diverged = True
            if not np.isfinite(mean_loss):
                diverged = True
                trace = trace[: epoch + 1]
                break
    return SgdResult(a_hat=a, b_hat=b, loss_trace=trace, diverged=diverged)


def save_loss_trace(path, trace: np.ndarray) -> None:
    """Write a loss trace as CSV with an epoch,mean_loss,eta header."""
    with open(path, "w") as fh:
        fh.write("epoch,mean_loss,eta\n")
        np.savetxt(fh, np.asarray(trace), delimiter=",", fmt=["%d", "%.17g", "%.17g"])
