"""Projected quasi-Newton minimization of the Bethe free energy.

Each outer iteration takes the quasi-Newton direction d = -B grad, shrinks
the full step by a constant factor until it stays inside the box, then
picks a step along that feasible segment with a randomized Wolfe line
search.  B approximates the inverse Hessian through BFGS updates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .bethe_core import EPS_BOX, BetheFunction, clamp
from .graph_model import Model

NOISE_RTOL = 1e-12

__all__ = [
    "OptimizerConfig",
    "LineSearchResult",
    "MinimizationResult",
    "RestartResult",
    "wolfe_line_search",
    "bethe_min",
    "multi_restart_minimize",
    "cluster_minima",
    "write_trace_csv",
]


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`bethe_min`.

    Parameters
    ----------
    epsilon : float
        Stop once the Euclidean gradient norm is at most this.
    tau1, tau2 : float
        Sufficient-decrease and curvature constants, 0 < tau1 < tau2 < 1.
    projection_shrink : float
        Factor applied to the maximal step while the trial point is outside the box.
    expansion : float
        Growth factor of the line-search expansion phase.
    max_iterations, max_line_search_steps : int
    eps_box : float
        Feasible region is [eps_box, 1 - eps_box]^N.
    init : {"identity", "random_spd"}
        Initial inverse-Hessian approximation.
    record_trace : bool
        Keep (iteration, F_B, grad_norm, step) per iteration.
    """

    epsilon: float = 1e-6
    tau1: float = 1e-4
    tau2: float = 0.9
    projection_shrink: float = 0.9
    expansion: float = 1.1
    max_iterations: int = 10000
    max_line_search_steps: int = 60
    eps_box: float = EPS_BOX
    init: str = "identity"
    record_trace: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.tau1 < self.tau2 < 1.0):
            raise ValueError("need 0 < tau1 < tau2 < 1")
        if not (0.0 < self.projection_shrink < 1.0):
            raise ValueError("projection_shrink must lie in (0, 1)")
        if not self.expansion > 1.0:
            raise ValueError("expansion must exceed 1")
        if self.epsilon <= 0 or self.max_iterations < 0 or self.max_line_search_steps < 1:
            raise ValueError("epsilon must be positive and iteration limits non-negative")
        if not (0.0 < self.eps_box < 0.5):
            raise ValueError("eps_box must lie in (0, 0.5)")
        if self.init not in ("identity", "random_spd"):
            raise ValueError("init must be 'identity' or 'random_spd'")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class LineSearchResult(NamedTuple):
    """Outcome of :func:`wolfe_line_search`.

    ``status`` is "wolfe" (both conditions hold), "capped" (sufficient
    decrease holds at the end of the segment where curvature cannot be
    met), "w1" (step budget exhausted; best sufficient-decrease step) or
    "failed" (no step with sufficient decrease found; ``step`` is 0).
    """

    step: float
    status: str
    f: float
    grad: np.ndarray
    evaluations: int

    @property
    def accepted(self) -> bool:
        return self.status != "failed"


@dataclass
class MinimizationResult:
    q_star: np.ndarray
    f_value: float
    grad_norm: float
    iterations: int
    converged: bool
    trace: list[tuple[int, float, float, float]] | None = None
    skipped_updates: int = 0
    line_search_failures: int = 0
    resets: int = 0


def _as_function(model_or_fn) -> BetheFunction:
    return model_or_fn if isinstance(model_or_fn, BetheFunction) else BetheFunction(model_or_fn)


def wolfe_line_search(
    model: Model | BetheFunction,
    q_tail: np.ndarray,
    q_head: np.ndarray,
    config: OptimizerConfig = OptimizerConfig(),
    rng: np.random.Generator | None = None,
    f_tail: float | None = None,
    g_tail: np.ndarray | None = None,
) -> LineSearchResult:
    """Randomized expand/contract search for a Wolfe step on [q_tail, q_head].

    The initial trial step is uniform in (0, 1).  While the sufficient
    decrease condition holds but the curvature condition does not, the step
    grows by ``config.expansion`` (never beyond 1, the end of the feasible
    segment).  Otherwise the step is drawn uniformly from a shrinking
    bracket (l, r) until both conditions hold.

    When the change in F_B is within rounding noise of F_B itself, the
    sufficient-decrease test falls back to the derivative form
    d.grad(rho) <= (2 tau1 - 1) d.grad(0), which is what the decrease test
    reduces to for a locally quadratic function.

    Raises
    ------
    ValueError
        If q_head - q_tail is not a descent direction at q_tail.
    """
    fn = _as_function(model)
    rng = np.random.default_rng() if rng is None else rng
    q_tail = np.asarray(q_tail, dtype=float)
    d = np.asarray(q_head, dtype=float) - q_tail
    if f_tail is None or g_tail is None:
        f_tail, g_tail = fn.value_and_gradient(q_tail)
    slope = float(d @ g_tail)
    if not slope < 0.0:
        raise ValueError("search direction is not a descent direction")
    tau1, tau2 = config.tau1, config.tau2

    evals = 0
    best: tuple[float, float, np.ndarray] | None = None  # (f, step, grad)

    # Below this change F_B differences are rounding noise; sufficient decrease
    # is then judged from the directional derivative instead.
    f_noise = NOISE_RTOL * max(1.0, abs(f_tail))

    def trial(rho: float):
        nonlocal evals, best
        evals += 1
        f, g = fn.value_and_gradient(q_tail + rho * d)
        dg = float(d @ g)
        w1 = f <= f_tail + tau1 * rho * slope
        if not w1 and f <= f_tail + f_noise and dg <= (2.0 * tau1 - 1.0) * slope:
            w1 = True
        w2 = dg >= tau2 * slope
        if w1 and (best is None or f < best[0]):
            best = (f, rho, g)
        return f, g, w1, w2

    rho = float(rng.random())
    if rho <= 0.0:
        rho = 0.5
    f, g, w1, w2 = trial(rho)
    while w1 and not w2:
        if rho >= 1.0:
            return LineSearchResult(1.0, "capped", f, g, evals)
        if evals >= config.max_line_search_steps:
            break
        rho = min(config.expansion * rho, 1.0)
        f, g, w1, w2 = trial(rho)
    if w1 and w2:
        return LineSearchResult(rho, "wolfe", f, g, evals)

    lo, hi = 0.0, rho
    while not (w1 and w2) and evals < config.max_line_search_steps:
        rho = float(rng.uniform(lo, hi))
        if rho <= lo:
            rho = 0.5 * (lo + hi)
        f, g, w1, w2 = trial(rho)
        if not w1:
            hi = rho
        else:
            lo = rho
    if w1 and w2:
        return LineSearchResult(rho, "wolfe", f, g, evals)
    if best is not None:
        return LineSearchResult(best[1], "w1", best[0], best[2], evals)
    return LineSearchResult(0.0, "failed", f_tail, g_tail, evals)


def _random_spd(n: int, rng: np.random.Generator) -> np.ndarray:
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Qm * rng.uniform(0.5, 1.5, n)) @ Qm.T


def _max_feasible_step(q, d, lo, hi, shrink) -> float:
    """Largest shrink**k (k >= 0) with q + shrink**k * d inside [lo, hi]^N; 0 if none."""
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (hi - q) / d, np.inf)
        down = np.where(d < 0, (lo - q) / d, np.inf)
    limit = float(min(up.min(initial=np.inf), down.min(initial=np.inf)))
    if limit >= 1.0:
        return 1.0
    if not limit > 0.0:
        return 0.0
    k = max(int(np.floor(np.log(limit) / np.log(shrink))), 0)
    rho = shrink**k
    # guard against rounding in the logarithm
    for _ in range(64):
        p = q + rho * d
        if np.all(p >= lo) and np.all(p <= hi):
            return rho
        rho *= shrink
    return 0.0


def bethe_min(
    model: Model | BetheFunction,
    q0: Sequence[float],
    config: OptimizerConfig = OptimizerConfig(),
    rng: np.random.Generator | None = None,
) -> MinimizationResult:
    """Minimize F_B from ``q0`` with projected BFGS and Wolfe line search.

    Returns the last iterate; ``converged`` is true only if the gradient
    norm fell to ``config.epsilon``.
    """
    fn = _as_function(model)
    rng = np.random.default_rng() if rng is None else rng
    lo, hi = config.eps_box, 1.0 - config.eps_box
    q = clamp(q0, config.eps_box)
    n = q.shape[0]
    if n != fn.n:
        raise ValueError("q0 has the wrong length")
    eye = np.eye(n)
    B = _random_spd(n, rng) if config.init == "random_spd" else eye.copy()
    f, g = fn.value_and_gradient(q)
    trace: list | None = [] if config.record_trace else None
    skipped = failures = resets = 0
    gnorm = float(np.linalg.norm(g))
    it = 0
    while it < config.max_iterations:
        if gnorm <= config.epsilon:
            break
        d = -(B @ g)
        identity_step = B is eye
        if not float(d @ g) < 0.0:
            B, d, identity_step = eye, -g, True
            resets += 1
        rho_max = _max_feasible_step(q, d, lo, hi, config.projection_shrink)
        if rho_max == 0.0:
            # Blocked at the box: drop outward components sitting on a face.
            blocked = ((q <= lo) & (d < 0)) | ((q >= hi) & (d > 0))
            d = np.where(blocked, 0.0, d)
            if not float(d @ g) < 0.0:
                break
            rho_max = _max_feasible_step(q, d, lo, hi, config.projection_shrink)
            if rho_max == 0.0:
                break
        q_pi = q + rho_max * d
        ls = wolfe_line_search(fn, q, q_pi, config, rng, f, g)
        if not ls.accepted:
            failures += 1
            if identity_step:
                break
            B = eye
            resets += 1
            continue
        it += 1
        q_new = q + ls.step * (q_pi - q)
        s = q_new - q
        y = ls.grad - g
        q, f, g = q_new, ls.f, ls.grad
        gnorm = float(np.linalg.norm(g))
        gamma = float(s @ y)
        if gamma > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            By = B @ y
            B = B + ((gamma + y @ By) / gamma**2) * np.outer(s, s) - (np.outer(By, s) + np.outer(s, By)) / gamma
        else:
            skipped += 1
        if trace is not None:
            trace.append((it, f, gnorm, ls.step * rho_max))
    return MinimizationResult(
        q_star=q,
        f_value=float(f),
        grad_norm=gnorm,
        iterations=it,
        converged=gnorm <= config.epsilon,
        trace=trace,
        skipped_updates=skipped,
        line_search_failures=failures,
        resets=resets,
    )


def cluster_minima(points: Sequence[np.ndarray], tol: float = 1e-3) -> list[list[int]]:
    """Greedy L-infinity clustering; each point joins the first cluster whose
    representative (its first member) lies within ``tol``."""
    reps: list[np.ndarray] = []
    groups: list[list[int]] = []
    for k, p in enumerate(points):
        for rep, members in zip(reps, groups):
            if np.max(np.abs(p - rep)) <= tol:
                members.append(k)
                break
        else:
            reps.append(np.asarray(p))
            groups.append([k])
    return groups


@dataclass
class RestartResult:
    """Runs from several random starts and the distinct minima they reached.

    ``clusters`` index into ``results`` and only contain converged runs
    (all runs if none converged).
    """

    results: list[MinimizationResult]
    clusters: list[list[int]]
    best_index: int
    centers: list[np.ndarray] = field(default_factory=list)

    @property
    def best(self) -> MinimizationResult:
        return self.results[self.best_index]

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_converged(self) -> int:
        return sum(r.converged for r in self.results)


def multi_restart_minimize(
    model: Model,
    restarts: int,
    seed: int | np.random.SeedSequence,
    config: OptimizerConfig = OptimizerConfig(),
    cluster_tol: float = 1e-3,
    start_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
) -> RestartResult:
    """Run :func:`bethe_min` from ``restarts`` uniform random starts.

    Every restart owns a generator spawned from ``seed`` that drives both
    its start point and its line search, so results do not depend on the
    order in which restarts are executed.
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    fn = BetheFunction(model, config.eps_box)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    results = []
    for child in ss.spawn(restarts):
        rng = np.random.Generator(np.random.PCG64(child))
        if start_sampler is None:
            q0 = rng.uniform(0.0, 1.0, model.node_count)
        else:
            q0 = start_sampler(rng, model.node_count)
        results.append(bethe_min(fn, q0, config, rng))
    pool = [k for k, r in enumerate(results) if r.converged] or list(range(len(results)))
    groups = cluster_minima([results[k].q_star for k in pool], cluster_tol)
    clusters = [[pool[k] for k in grp] for grp in groups]
    centers = [np.mean([results[k].q_star for k in c], axis=0) for c in clusters]
    best_index = min(pool, key=lambda k: results[k].f_value)
    return RestartResult(results, clusters, best_index, centers)


def write_trace_csv(result: MinimizationResult, path: str | Path) -> None:
    """Write the per-iteration trace as CSV (iteration, F_B, grad_norm, step)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "F_B", "grad_norm", "step"])
        for row in result.trace or []:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
