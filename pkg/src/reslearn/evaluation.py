"""Metrics, the two-phase pipeline, and the multi-trial experiment harness.

Error conventions follow the relative Frobenius form for weights and a
per-sample normalized output error, both measured against held-out data
that is regenerated from recorded seeds (never the training set). Held-out
labels are always drawn without noise, even when training labels were
noisy: the score measures distance to the true function rather than to one
more noisy draw, and every method is scored against the same clean target.

Seeding is content-addressed: each (d, n, sigma, method, trial) cell hashes
to its own seed, so any cell can be reproduced in isolation and results do
not depend on execution order. Teachers are derived from (d, trial) only,
which keeps them fixed while n, sigma, or the method vary — the shape the
robustness and consistency studies need.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import SgdConfig, sgd_train, vanilla_lr
from .errors import DimensionMismatchError, ReslearnError
from .layer1 import HiddenSampleSet, Layer1Estimate, RowScaleConfig, learn_layer1
from .layer2 import Layer2Estimate, RescaleConfig, learn_layer2
from .methods import ConvexMethod
from .model import (
    GaussianIid,
    InputDistribution,
    NetworkGenSpec,
    ResidualUnit,
    SampleSet,
    derive_seed,
    forward_batch,
    generate_unit,
    sample,
    standard_mixture,
)
from .solver import SolverConfig

CONVEX_METHODS = tuple(m.value for m in ConvexMethod)
ALL_METHODS = CONVEX_METHODS + ("sgd", "vanilla-lr")


@dataclass(frozen=True)
class ErrorReport:
    """Relative errors of one learned student against its teacher."""

    layer1_rel: float
    layer2_rel: float
    output_rel: float
    n: int
    d: int
    seed: int
    method: str = ""
    noise_sigma: float = 0.0


@dataclass(frozen=True)
class TrialGrid:
    """A full experiment grid; every list axis is crossed with the others."""

    dims: tuple[int, ...]
    sample_sizes: tuple[int, ...]
    noise_sigmas: tuple[float, ...] = (0.0,)
    methods: tuple[str, ...] = ("qp",)
    trials_per_cell: int = 16
    test_set_size: int = 1000
    base_seed: int = 0
    input_kind: str = "mixture"  # "mixture" or "gaussian"

    def __post_init__(self):
        for name in ("dims", "sample_sizes", "noise_sigmas", "methods"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {ALL_METHODS}")
        if self.input_kind not in ("mixture", "gaussian"):
            raise ValueError(f"unknown input_kind {self.input_kind!r}")


@dataclass(frozen=True)
class TrialRow:
    """One trial's outcome inside a grid; failures keep their cell visible."""

    d: int
    n: int
    noise_sigma: float
    method: str
    trial: int
    seed: int
    layer1_rel: float
    layer2_rel: float
    output_rel: float
    status: str = "ok"
    message: str = ""


def make_input_dist(kind: str, dim: int) -> InputDistribution:
    if kind == "mixture":
        return standard_mixture(dim)
    if kind == "gaussian":
        return GaussianIid(dim=dim)
    raise ValueError(f"unknown input kind {kind!r}")


# --- metrics -------------------------------------------------------------

def relative_errors(
    est_a, est_b, unit: ResidualUnit, test: SampleSet, method: str = ""
) -> ErrorReport:
    """Frobenius-relative weight errors plus mean normalized output error."""
    est_a = np.asarray(est_a, dtype=np.float64)
    est_b = np.asarray(est_b, dtype=np.float64)
    if est_a.shape != unit.a.shape or est_b.shape != unit.b.shape:
        raise DimensionMismatchError(
            f"estimate shapes {est_a.shape}/{est_b.shape} do not match "
            f"teacher {unit.a.shape}/{unit.b.shape}"
        )
    if test.n < 1:
        raise ValueError("test set is empty")
    layer1_rel = float(np.linalg.norm(est_a - unit.a) / np.linalg.norm(unit.a))
    layer2_rel = float(np.linalg.norm(est_b - unit.b) / np.linalg.norm(unit.b))
    pred = forward_batch(est_a, est_b, test.xs)
    norms = np.linalg.norm(test.ys, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    output_rel = float(np.mean(np.linalg.norm(pred - test.ys, axis=1) / norms))
    return ErrorReport(
        layer1_rel=layer1_rel,
        layer2_rel=layer2_rel,
        output_rel=output_rel,
        n=test.n,
        d=test.d,
        seed=test.seed if test.seed is not None else -1,
        method=method,
        noise_sigma=test.noise_sigma,
    )


# --- pipeline ------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    solver: SolverConfig = field(default_factory=SolverConfig)
    rescale: RescaleConfig = field(default_factory=RescaleConfig)
    row_scale: RowScaleConfig = field(default_factory=RowScaleConfig)
    assume_unique: bool = False


def full_pipeline(
    samples: SampleSet,
    method: ConvexMethod | str = ConvexMethod.QP,
    cfg: PipelineConfig | None = None,
) -> tuple[Layer1Estimate, Layer2Estimate]:
    """Learn layer 2 from (x, y), then layer 1 from the recovered hidden
    outputs. The second stage consumes the first stage's xi estimates as its
    h samples, clipped at zero so downstream validation holds."""
    cfg = cfg or PipelineConfig()
    method = ConvexMethod.parse(method)
    est2 = learn_layer2(
        samples,
        method,
        solver_cfg=cfg.solver,
        rescale_cfg=cfg.rescale,
        assume_unique=cfg.assume_unique,
    )
    hidden = HiddenSampleSet(xs=samples.xs, hs=np.maximum(est2.xi_hat, 0.0))
    est1 = learn_layer1(hidden, method, solver_cfg=cfg.solver, scale_cfg=cfg.row_scale)
    return est1, est2


def run_trial(
    unit: ResidualUnit,
    n: int,
    noise_sigma: float,
    method: str,
    seed: int,
    test_set_size: int = 1000,
    input_kind: str = "mixture",
    cfg: PipelineConfig | None = None,
) -> ErrorReport:
    """Draw a training set, learn with one method, score on fresh data.

    The training set uses ``seed`` directly; the held-out set derives its
    own seed from it, so recording (unit, seed) reproduces both exactly.
    The held-out set is drawn without label noise: the score measures how
    close the learned function is to the true one, and noisy per-sample
    normalization would instead be dominated by test points whose noisy
    label happens to land near zero norm.
    """
    dist = make_input_dist(input_kind, unit.d)
    train = sample(unit, dist, n, noise_sigma, seed=seed)
    test = sample(unit, dist, test_set_size, 0.0, seed=derive_seed(seed, "test"))
    if method in CONVEX_METHODS:
        est1, est2 = full_pipeline(train, method, cfg)
        report = relative_errors(est1.a_hat, est2.b_hat, unit, test, method=method)
    elif method == "sgd":
        result = sgd_train(train, SgdConfig(seed=derive_seed(seed, "sgd")))
        report = relative_errors(result.a_hat, result.b_hat, unit, test, method=method)
    elif method == "vanilla-lr":
        result = vanilla_lr(train)
        if not result.success:
            raise ReslearnError(
                f"vanilla LR failed: {result.n_neg_used} negative / "
                f"{result.n_pos_used} positive usable samples"
            )
        report = relative_errors(result.a_hat, result.b_hat, unit, test, method=method)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ErrorReport(
        layer1_rel=report.layer1_rel,
        layer2_rel=report.layer2_rel,
        output_rel=report.output_rel,
        n=n,
        d=unit.d,
        seed=seed,
        method=method,
        noise_sigma=noise_sigma,
    )


# --- grids ---------------------------------------------------------------

def cell_seed(base_seed: int, d: int, n: int, sigma: float, method: str, trial: int) -> int:
    """Content hash of one grid cell; the per-trial RNG root."""
    return derive_seed(base_seed, d, n, float(sigma), method, trial)


def teacher_seed(base_seed: int, d: int, trial: int) -> int:
    """Teachers depend only on (d, trial): fixed across n, sigma, method."""
    return derive_seed(base_seed, "teacher", d, trial)


def _grid_teacher(grid: TrialGrid, d: int, trial: int) -> ResidualUnit:
    return generate_unit(NetworkGenSpec(d=d, m=d, seed=teacher_seed(grid.base_seed, d, trial)))


def _run_cell_trial(args) -> TrialRow:
    grid, d, n, sigma, method, trial = args
    seed = cell_seed(grid.base_seed, d, n, sigma, method, trial)
    try:
        unit = _grid_teacher(grid, d, trial)
        report = run_trial(
            unit, n, sigma, method, seed,
            test_set_size=grid.test_set_size,
            input_kind=grid.input_kind,
        )
        return TrialRow(
            d=d, n=n, noise_sigma=sigma, method=method, trial=trial, seed=seed,
            layer1_rel=report.layer1_rel,
            layer2_rel=report.layer2_rel,
            output_rel=report.output_rel,
        )
    except ReslearnError as exc:
        return TrialRow(
            d=d, n=n, noise_sigma=sigma, method=method, trial=trial, seed=seed,
            layer1_rel=float("nan"), layer2_rel=float("nan"), output_rel=float("nan"),
            status="failed", message=str(exc),
        )


def run_grid(grid: TrialGrid, jobs: int = 1) -> list[TrialRow]:
    """All trials of the grid, in deterministic cell order.

    Failures come back as rows with status "failed" rather than stopping
    the sweep. ``jobs`` > 1 distributes trials over processes; results are
    identical either way because every trial is seeded by content.
    """
    tasks = [
        (grid, d, n, sigma, method, trial)
        for d in grid.dims
        for n in grid.sample_sizes
        for sigma in grid.noise_sigmas
        for method in grid.methods
        for trial in range(grid.trials_per_cell)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_trial, tasks, chunksize=1))
    else:
        rows = [_run_cell_trial(t) for t in tasks]
    return rows


def aggregate_rows(rows: list[TrialRow]) -> list[dict]:
    """Collapse trial rows to one record per (d, n, sigma, method) with
    mean, std, and median of each metric over the successful trials."""
    cells: dict[tuple, list[TrialRow]] = {}
    for row in rows:
        cells.setdefault((row.d, row.n, row.noise_sigma, row.method), []).append(row)
    out = []
    for key in sorted(cells, key=lambda k: (k[0], k[1], k[2], k[3])):
        bucket = cells[key]
        ok = [r for r in bucket if r.status == "ok"]
        record = {
            "d": key[0],
            "n": key[1],
            "noise_sigma": key[2],
            "method": key[3],
            "trials": len(bucket),
            "failures": len(bucket) - len(ok),
        }
        for metric in ("layer1_rel", "layer2_rel", "output_rel"):
            values = np.array([getattr(r, metric) for r in ok])
            if values.size:
                record[f"{metric}_mean"] = float(values.mean())
                record[f"{metric}_std"] = float(values.std())
                record[f"{metric}_median"] = float(np.median(values))
            else:
                record[f"{metric}_mean"] = float("nan")
                record[f"{metric}_std"] = float("nan")
                record[f"{metric}_median"] = float("nan")
        out.append(record)
    return out


# --- success-rate study --------------------------------------------------

def run_success_rates(
    dims,
    sample_sizes,
    trials: int,
    base_seed: int = 0,
    input_mean: float = 0.0,
) -> list[dict]:
    """Success rate of the two-orthant regression per (d, n) cell.

    Inputs are i.i.d. N(input_mean, 1); a nonzero mean skews the orthant
    probabilities and drives the rates down, which is itself one of the
    study's findings.
    """
    out = []
    for d in dims:
        for n in sample_sizes:
            successes = 0
            for trial in range(trials):
                unit = generate_unit(
                    NetworkGenSpec(d=d, m=d, seed=derive_seed(base_seed, "teacher", d, trial))
                )
                seed = derive_seed(base_seed, "vlr", d, n, float(input_mean), trial)
                train = sample(unit, GaussianIid(dim=d, mean=input_mean), n, 0.0, seed=seed)
                if vanilla_lr(train).success:
                    successes += 1
            out.append(
                {
                    "d": d,
                    "n": n,
                    "trials": trials,
                    "successes": successes,
                    "rate": successes / trials,
                    "input_mean": input_mean,
                }
            )
    return out


# --- serialization -------------------------------------------------------

def save_rows_csv(path, rows: list[TrialRow]) -> None:
    """Long-format CSV, one line per trial."""
    fields = [
        "d", "n", "noise_sigma", "method", "trial", "seed",
        "layer1_rel", "layer2_rel", "output_rel", "status", "message",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def load_rows_csv(path) -> list[TrialRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                TrialRow(
                    d=int(rec["d"]),
                    n=int(rec["n"]),
                    noise_sigma=float(rec["noise_sigma"]),
                    method=rec["method"],
                    trial=int(rec["trial"]),
                    seed=int(rec["seed"]),
                    layer1_rel=float(rec["layer1_rel"]),
                    layer2_rel=float(rec["layer2_rel"]),
                    output_rel=float(rec["output_rel"]),
                    status=rec["status"],
                    message=rec["message"],
                )
            )
    return rows


def save_aggregates_json(path, grid: TrialGrid, aggregates: list[dict]) -> None:
    """Aggregated results with the generating config embedded for replay."""
    payload = {"config": asdict(grid), "cells": aggregates}
    Path(path).write_text(json.dumps(payload, indent=2))
