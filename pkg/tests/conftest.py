import numpy as np
import pytest

from bethe.graph_model import Model, complete_edges


def random_model(rng, n=None, p=0.5, j_range=(-1.0, 1.0), f_range=(-0.5, 0.5), beta=None):
    """Erdos-Renyi style model with random couplings, fields and beta."""
    n = int(rng.integers(2, 8)) if n is None else n
    pairs = complete_edges(n)
    edges = pairs[rng.random(pairs.shape[0]) < p]
    if edges.shape[0] == 0:
        edges = pairs[:1]
    J = rng.uniform(*j_range, size=edges.shape[0])
    theta = rng.uniform(*f_range, size=n)
    beta = float(rng.uniform(0.2, 2.0)) if beta is None else beta
    return Model(n, edges, J, theta, beta)


def random_tree(rng, n, j_range=(-1.0, 1.0), f_range=(-1.0, 1.0), beta=1.0):
    """Random recursive tree: node k attaches to a uniform earlier node."""
    parents = [int(rng.integers(0, k)) for k in range(1, n)]
    edges = np.array([[p, k] for k, p in zip(range(1, n), parents)]).reshape(-1, 2)
    return Model(n, edges, rng.uniform(*j_range, n - 1), rng.uniform(*f_range, n), beta)


def k4(J, theta=0.0, beta=1.0):
    return Model(4, complete_edges(4), np.full(6, float(J)), np.full(4, float(theta)), beta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
