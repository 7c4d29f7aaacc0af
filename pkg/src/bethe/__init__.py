"""Bethe free energy minimization and convexity certificates for binary pairwise models."""

from .graph_model import GraphFamily, Model, build_model, degree
from .bethe_core import (
    BetheFunction,
    bethe_free_energy,
    bethe_gradient,
    bethe_hessian,
    pairwise_marginals_from_q,
    t_ij,
    xi_derivatives,
    xi_star,
)

__version__ = "0.1.0"
