"""Exact partition function and marginals by full enumeration.

The 2^N configurations are enumerated in blocks.  Spins are split into a
"low" half and a "high" half; for a block of high configurations the
energies of every (high, low) combination form a matrix

    E[h, l] = E_high[h] + E_low[l] + x_high[h] @ C @ x_low[l]

with C the couplings crossing the split.  Block weights are accumulated
in the linear domain relative to a running maximum of -beta*E, so the log
partition function is a streaming log-sum-exp and the first and second
spin moments come out of a few matrix products per block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph_model import Model

__all__ = ["N_MAX", "ExactSolution", "brute_force_solve", "gibbs_free_energy_at_minimum", "spin_table"]

N_MAX = 25
_LOW_BITS = 12
_BLOCK_ROWS = 512


@dataclass(frozen=True)
class ExactSolution:
    """Ground-truth quantities of a model.

    Attributes
    ----------
    log_Z : float
    singleton : (N,) array
        P(X_i = +1).
    pairwise : (E, 4) array
        P(++), P(+-), P(-+), P(--) per edge, edges in model order.
    """

    log_Z: float
    singleton: np.ndarray
    pairwise: np.ndarray

    def to_dict(self) -> dict:
        return {
            "log_Z": float(self.log_Z),
            "singleton": [float(v) for v in self.singleton],
            "pairwise": [[float(v) for v in row] for row in self.pairwise],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def spin_table(n: int) -> np.ndarray:
    """All 2^n spin vectors; row k holds the bits of k mapped 1 -> +1, 0 -> -1."""
    k = np.arange(1 << n, dtype=np.int64)[:, None]
    bits = (k >> np.arange(n, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(float)


def brute_force_solve(model: Model, n_max: int = N_MAX) -> ExactSolution:
    """Enumerate all spin configurations of ``model``.

    Raises
    ------
    ValueError
        If the model has more than ``n_max`` nodes.
    """
    n = model.node_count
    if n > n_max:
        raise ValueError(f"exact enumeration limited to {n_max} nodes, model has {n}")
    beta = model.beta
    n_low = min(n, _LOW_BITS)
    n_high = n - n_low
    low = np.arange(n_low)
    high = np.arange(n_low, n)

    edges, J, theta = model.edges, model.couplings, model.fields
    in_low = edges < n_low
    ll = in_low[:, 0] & in_low[:, 1]
    hh = ~in_low[:, 0] & ~in_low[:, 1]
    cross = ~(ll | hh)

    X_low = spin_table(n_low)
    # Log-weights -beta*E split into parts; couplings of crossing edges go into C.
    w_low = beta * (X_low @ theta[low])
    if ll.any():
        e = edges[ll]
        w_low += beta * ((X_low[:, e[:, 0]] * X_low[:, e[:, 1]]) @ J[ll])
    C = np.zeros((max(n_high, 0), n_low))
    if cross.any():
        e = edges[cross]
        # canonical edges have i < j, so the low endpoint is always e[:, 0]
        np.add.at(C, (e[:, 1] - n_low, e[:, 0]), beta * J[cross])

    hh_edges = edges[hh] - n_low
    J_hh = J[hh]
    theta_high = theta[high]

    run_max = -np.inf
    total = 0.0
    m1 = np.zeros(n)
    m2 = np.zeros((n, n))

    n_high_states = 1 << n_high
    for start in range(0, n_high_states, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, n_high_states)
        k = np.arange(start, stop, dtype=np.int64)[:, None]
        X_high = (2 * ((k >> np.arange(n_high, dtype=np.int64)) & 1) - 1).astype(float)
        w_high = beta * (X_high @ theta_high)
        if hh_edges.size:
            w_high += beta * ((X_high[:, hh_edges[:, 0]] * X_high[:, hh_edges[:, 1]]) @ J_hh)
        logw = w_high[:, None] + w_low[None, :]
        if n_high:
            logw += (X_high @ C) @ X_low.T
        block_max = float(logw.max())
        if block_max > run_max:
            scale = np.exp(run_max - block_max) if np.isfinite(run_max) else 0.0
            total *= scale
            m1 *= scale
            m2 *= scale
            run_max = block_max
        W = np.exp(logw - run_max)
        r = W.sum(axis=1)
        cl = W.sum(axis=0)
        total += r.sum()
        WXl = W @ X_low
        m1[:n_low] += cl @ X_low
        m1[n_low:] += r @ X_high
        m2[:n_low, :n_low] += X_low.T @ (cl[:, None] * X_low)
        m2[n_low:, n_low:] += X_high.T @ (r[:, None] * X_high)
        m2[n_low:, :n_low] += X_high.T @ WXl

    log_Z = run_max + np.log(total)
    mean = m1 / total
    second = m2 / total
    second = np.tril(second) + np.tril(second, -1).T

    singleton = np.clip(0.5 * (1.0 + mean), 0.0, 1.0)
    i, j = edges[:, 0], edges[:, 1]
    mij = second[j, i]
    mi, mj = mean[i], mean[j]
    pairwise = 0.25 * np.stack(
        [1.0 + mi + mj + mij, 1.0 + mi - mj - mij, 1.0 - mi + mj - mij, 1.0 - mi - mj + mij], axis=1
    ).reshape(-1, 4)
    return ExactSolution(float(log_Z), singleton, np.clip(pairwise, 0.0, 1.0))


def gibbs_free_energy_at_minimum(model: Model, n_max: int = N_MAX) -> float:
    """Helmholtz free energy -(1/beta) log Z."""
    return -brute_force_solve(model, n_max).log_Z / model.beta
