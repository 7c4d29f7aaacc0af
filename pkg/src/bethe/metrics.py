"""Error measures between Bethe estimates and exact marginals / partition function."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .bethe_core import pairwise_marginals_from_q
from .exact_oracle import ExactSolution
from .graph_model import Model
from .optimizer import MinimizationResult, RestartResult

__all__ = [
    "ErrorRecord",
    "RestartErrors",
    "log_z_bethe",
    "signed_log_z_gap",
    "partition_error",
    "singleton_error",
    "pairwise_error",
    "error_record",
    "restart_errors",
]


@dataclass(frozen=True)
class ErrorRecord:
    """The three error measures of one Bethe estimate."""

    partition_error: float
    singleton_error: float
    pairwise_error: float

    def to_dict(self) -> dict:
        return asdict(self)


def log_z_bethe(f_bethe_min: float, beta: float) -> float:
    """log Z_B defined through -(1/beta) log Z_B = min F_B."""
    return -beta * float(f_bethe_min)


def signed_log_z_gap(exact: ExactSolution, f_bethe_min: float, beta: float) -> float:
    """log Z_B - log Z; non-positive for ferromagnetic models."""
    return log_z_bethe(f_bethe_min, beta) - exact.log_Z


def partition_error(exact: ExactSolution, f_bethe_min: float, beta: float) -> float:
    """|-log Z + log Z_B|."""
    return abs(signed_log_z_gap(exact, f_bethe_min, beta))


def singleton_error(exact: ExactSolution, q) -> float:
    """(2 / N) sum_i |p_i(+1) - q_i|.

    The factor 2 counts both states of each binary variable.
    """
    q = np.asarray(q, dtype=float)
    p = exact.singleton
    if q.shape != p.shape:
        raise ValueError(f"q has shape {q.shape}, expected {p.shape}")
    return float(2.0 * np.abs(p - q).sum() / p.shape[0])


def pairwise_error(exact: ExactSolution, model: Model, q) -> float:
    """Mean over edges of the l1 distance between exact and Bethe pairwise tables.

    Zero for a model without edges.
    """
    if model.edge_count == 0:
        return 0.0
    bethe = pairwise_marginals_from_q(model, q)
    return float(np.abs(exact.pairwise - bethe).sum(axis=1).mean())


def error_record(exact: ExactSolution, model: Model, result: MinimizationResult) -> ErrorRecord:
    return ErrorRecord(
        partition_error(exact, result.f_value, model.beta),
        singleton_error(exact, result.q_star),
        pairwise_error(exact, model, result.q_star),
    )


@dataclass(frozen=True)
class RestartErrors:
    """Errors of a restart fleet.

    ``best`` uses the lowest-F_B converged run; ``averaged`` is the mean of
    the per-run errors over converged runs.  Non-converged runs are left
    out of both and counted in ``excluded``.  When no run converged both
    records are NaN.
    """

    best: ErrorRecord
    averaged: ErrorRecord
    excluded: int


def restart_errors(exact: ExactSolution, model: Model, fleet: RestartResult) -> RestartErrors:
    runs = [r for r in fleet.results if r.converged]
    excluded = len(fleet.results) - len(runs)
    if not runs:
        nan = ErrorRecord(np.nan, np.nan, np.nan)
        return RestartErrors(nan, nan, excluded)
    records = [error_record(exact, model, r) for r in runs]
    best = records[int(np.argmin([r.f_value for r in runs]))]
    arr = np.array([[e.partition_error, e.singleton_error, e.pairwise_error] for e in records])
    mean = arr.mean(axis=0)
    return RestartErrors(best, ErrorRecord(*(float(v) for v in mean)), excluded)
