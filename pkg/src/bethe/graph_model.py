"""Binary pairwise models and the random graph families used in experiments.

A model carries an undirected graph over spins x_i in {+1, -1}, couplings
J_ij on the edges, fields theta_i on the nodes and an inverse temperature
beta.  The energy is

    E(x) = -sum_{(i,j)} J_ij x_i x_j - sum_i theta_i x_i

and the Gibbs distribution is p(x) proportional to exp(-beta * E(x)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Model",
    "GraphFamily",
    "build_model",
    "degree",
    "grid_edges",
    "complete_edges",
    "erdos_renyi_edges",
    "model_from_json",
    "model_to_json",
    "load_model",
    "save_model",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable binary pairwise model.

    Edges are stored canonically as ``(min(i, j), max(i, j))`` in sorted
    order, so two models built from the same edge set in different orders
    are indistinguishable downstream.

    Parameters
    ----------
    node_count : int
        Number of spins N (nodes are labelled 0..N-1).
    edges : (E, 2) int array
        Canonical sorted edge list.
    couplings : (E,) float array
        J_ij aligned with ``edges``.
    fields : (N,) float array
        theta_i.
    beta : float
        Inverse temperature, strictly positive.
    """

    node_count: int
    edges: np.ndarray
    couplings: np.ndarray
    fields: np.ndarray
    beta: float
    degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = int(self.node_count)
        if n < 1:
            raise ValueError("node_count must be positive")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        couplings = np.asarray(self.couplings, dtype=float).reshape(-1)
        fields = np.asarray(self.fields, dtype=float).reshape(-1)
        if couplings.shape[0] != edges.shape[0]:
            raise ValueError("one coupling per edge required")
        if fields.shape[0] != n:
            raise ValueError("one field per node required")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge refers to a node outside 0..N-1")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        if not (np.all(np.isfinite(couplings)) and np.all(np.isfinite(fields))):
            raise ValueError("couplings and fields must be finite")
        beta = float(self.beta)
        if not (np.isfinite(beta) and beta > 0.0):
            raise ValueError("beta must be a finite positive number")

        canon = np.sort(edges, axis=1)
        order = np.lexsort((canon[:, 1], canon[:, 0]))
        canon = canon[order]
        couplings = couplings[order]
        if canon.shape[0] > 1 and np.any(np.all(canon[1:] == canon[:-1], axis=1)):
            raise ValueError("duplicate edge")

        deg = np.bincount(canon.reshape(-1), minlength=n).astype(np.int64)
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "edges", _frozen(canon))
        object.__setattr__(self, "couplings", _frozen(couplings))
        object.__setattr__(self, "fields", _frozen(fields))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "degrees", _frozen(deg))

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        edges: Iterable[Sequence[float]],
        fields: Sequence[float] | None = None,
        beta: float = 1.0,
    ) -> "Model":
        """Build a model from ``(i, j, J_ij)`` triples."""
        triples = [tuple(e) for e in edges]
        ij = np.array([[int(t[0]), int(t[1])] for t in triples], dtype=np.int64).reshape(-1, 2)
        J = np.array([float(t[2]) for t in triples], dtype=float)
        if fields is None:
            fields = np.zeros(node_count)
        return cls(node_count, ij, J, np.asarray(fields, dtype=float), beta)

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    def with_beta(self, beta: float) -> "Model":
        return Model(self.node_count, self.edges, self.couplings, self.fields, beta)

    def with_fields(self, fields: Sequence[float]) -> "Model":
        return Model(self.node_count, self.edges, self.couplings, np.asarray(fields, float), self.beta)

    def with_couplings(self, couplings: Sequence[float]) -> "Model":
        return Model(self.node_count, self.edges, np.asarray(couplings, float), self.fields, self.beta)

    def neighbors(self, i: int) -> np.ndarray:
        """Neighbors of node ``i`` in increasing order."""
        _check_node(self, i)
        e = self.edges
        return np.sort(np.concatenate([e[e[:, 0] == i, 1], e[e[:, 1] == i, 0]]))

    def incident_couplings(self, i: int) -> np.ndarray:
        """Couplings of the edges touching ``i``, ordered by neighbor index."""
        _check_node(self, i)
        e = self.edges
        mask = (e[:, 0] == i) | (e[:, 1] == i)
        other = np.where(e[mask, 0] == i, e[mask, 1], e[mask, 0])
        return self.couplings[mask][np.argsort(other)]

    def energy(self, x: np.ndarray) -> np.ndarray:
        """Energy of spin configurations ``x`` (shape (..., N), entries +-1)."""
        x = np.asarray(x, dtype=float)
        i, j = self.edges[:, 0], self.edges[:, 1]
        pair = (x[..., i] * x[..., j]) @ self.couplings
        return -pair - x @ self.fields

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Model):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and self.beta == other.beta
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.couplings, other.couplings)
            and np.array_equal(self.fields, other.fields)
        )

    __hash__ = None  # type: ignore[assignment]


def _check_node(model: Model, i: int) -> None:
    if not (0 <= int(i) < model.node_count):
        raise IndexError(f"node {i} out of range for a model with {model.node_count} nodes")


def degree(model: Model, i: int) -> int:
    """Number of neighbors of node ``i``."""
    _check_node(model, i)
    return int(model.degrees[int(i)])


# --------------------------------------------------------------------------
# Graph families
# --------------------------------------------------------------------------

def grid_edges(rows: int, cols: int) -> np.ndarray:
    """4-neighbor lattice on ``rows x cols`` nodes, row-major labels."""
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be positive")
    idx = np.arange(rows * cols).reshape(rows, cols)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return np.concatenate([horiz, vert]).reshape(-1, 2)


def complete_edges(n: int) -> np.ndarray:
    iu, ju = np.triu_indices(n, k=1)
    return np.stack([iu, ju], axis=1)


def erdos_renyi_edges(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Each of the n(n-1)/2 pairs is included independently with probability p."""
    pairs = complete_edges(n)
    keep = rng.random(pairs.shape[0]) < p
    return pairs[keep]


_KINDS = ("grid", "complete", "erdos_renyi")


@dataclass(frozen=True)
class GraphFamily:
    """Recipe for a random model.

    Parameters
    ----------
    kind : {"grid", "complete", "erdos_renyi"}
    size : tuple of int
        ``(rows, cols)`` for grids, ``(n,)`` otherwise.
    p : float
        Edge probability (Erdos-Renyi only).
    coupling_range, field_range : (low, high)
        Couplings and fields are drawn uniformly from these intervals.
    seed : int
        Seed of the single PCG64 generator that drives topology and
        parameters, in that order.
    """

    kind: str
    size: tuple[int, ...]
    p: float = 0.2
    coupling_range: tuple[float, float] = (0.0, 1.0)
    field_range: tuple[float, float] = (-0.125, 0.125)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}; expected one of {_KINDS}")
        size = tuple(int(s) for s in self.size)
        object.__setattr__(self, "size", size)
        if self.kind == "grid":
            if len(size) != 2 or min(size) < 1 or size[0] * size[1] < 2:
                raise ValueError("grid needs (rows, cols) with at least two nodes")
        else:
            if len(size) != 1 or size[0] < 2:
                raise ValueError(f"{self.kind} needs (n,) with n >= 2")
        if self.kind == "erdos_renyi" and not (0.0 <= self.p <= 1.0):
            raise ValueError("edge probability must lie in [0, 1]")
        for name, (lo, hi) in (("coupling_range", self.coupling_range), ("field_range", self.field_range)):
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"{name} must be a finite interval with low <= high")
        if self.coupling_range[0] == self.coupling_range[1]:
            raise ValueError("coupling_range is degenerate")

    @property
    def node_count(self) -> int:
        return self.size[0] * self.size[1] if self.kind == "grid" else self.size[0]

    def with_seed(self, seed: int) -> "GraphFamily":
        return GraphFamily(self.kind, self.size, self.p, self.coupling_range, self.field_range, seed)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "size": list(self.size),
            "p": self.p,
            "coupling_range": list(self.coupling_range),
            "field_range": list(self.field_range),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphFamily":
        return cls(
            kind=d["kind"],
            size=tuple(d["size"]),
            p=float(d.get("p", 0.2)),
            coupling_range=tuple(d.get("coupling_range", (0.0, 1.0))),
            field_range=tuple(d.get("field_range", (-0.125, 0.125))),
            seed=int(d.get("seed", 0)),
        )


def build_model(family: GraphFamily, beta: float, rng: np.random.Generator | None = None) -> Model:
    """Sample a model from ``family``.

    With ``rng=None`` a fresh PCG64 generator seeded from ``family.seed`` is
    used, so the result depends only on the family and ``beta``.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(family.seed))
    n = family.node_count
    if family.kind == "grid":
        edges = grid_edges(*family.size)
    elif family.kind == "complete":
        edges = complete_edges(n)
    else:
        edges = erdos_renyi_edges(n, family.p, rng)
    lo, hi = family.coupling_range
    J = rng.uniform(lo, hi, size=edges.shape[0])
    flo, fhi = family.field_range
    theta = rng.uniform(flo, fhi, size=n) if fhi > flo else np.full(n, flo)
    return Model(n, edges, J, theta, beta)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def model_to_json(model: Model) -> str:
    """JSON text; Python float repr round-trips doubles exactly."""
    payload = {
        "nodes": model.node_count,
        "beta": model.beta,
        "edges": [[int(i), int(j), float(J)] for (i, j), J in zip(model.edges, model.couplings)],
        "fields": [float(t) for t in model.fields],
    }
    return json.dumps(payload)


def model_from_json(text: str) -> Model:
    try:
        d = json.loads(text)
        n = int(d["nodes"])
        edges = d.get("edges", [])
        fields = d.get("fields")
        beta = float(d["beta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed model JSON: {exc}") from exc
    for e in edges:
        if len(e) != 3:
            raise ValueError("each edge must be [i, j, J]")
    return Model.from_edges(n, edges, fields, beta)


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model) + "\n")


def load_model(path: str | Path) -> Model:
    return model_from_json(Path(path).read_text())
