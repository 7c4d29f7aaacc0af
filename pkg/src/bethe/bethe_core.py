"""Bethe free energy on the Bethe box and its derivatives.

Every point of the Bethe box is a vector q of singleton probabilities
q_i = b_i(x_i = +1).  For an edge (i, j) the pairwise pseudo-marginal is
fixed to the table

    (++, +-, -+, --) = (xi, q_i - xi, q_j - xi, 1 + xi - q_i - q_j)

where xi = xi*(q_i, q_j) is the root of

    alpha * xi**2 - (1 + alpha * (q_i + q_j)) * xi + (1 + alpha) * q_i * q_j = 0,
    alpha = exp(4 * beta * J_ij) - 1,

that lies inside the local-polytope bounds.  The free energy, gradient and
Hessian below are all evaluated at that xi.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .graph_model import Model

__all__ = [
    "EPS_BOX",
    "TOL_XI",
    "ALPHA_SERIES_SWITCH",
    "sigmoid",
    "clamp",
    "edge_alpha",
    "xi_star",
    "t_ij",
    "EdgeAux",
    "edge_aux",
    "BetheFunction",
    "bethe_free_energy",
    "bethe_gradient",
    "bethe_hessian",
    "xi_derivatives",
    "pairwise_marginals_from_q",
]

EPS_BOX = 1e-9
TOL_XI = 1e-10
ALPHA_SERIES_SWITCH = 1e-8


def sigmoid(x):
    """Logistic function 1 / (1 + exp(-x))."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def clamp(q, eps: float = EPS_BOX) -> np.ndarray:
    """Project onto the closed box [eps, 1 - eps]."""
    return np.clip(np.asarray(q, dtype=float), eps, 1.0 - eps)


def edge_alpha(model: Model) -> np.ndarray:
    """alpha_ij = exp(4 beta J_ij) - 1 for every edge."""
    return np.expm1(4.0 * model.beta * model.couplings)


def xi_star(q_i, q_j, alpha):
    """Stationary pairwise probability xi*(q_i, q_j).

    The quadratic is divided through by (1 + alpha) so large couplings do
    not overflow.  The root is taken in conjugate form 2 q_i q_j / (Q + sqrt(D))
    whenever Q >= 0 and in direct form (Q - sqrt(D)) / (2 alpha) otherwise, so
    neither form subtracts nearly equal numbers; the discriminant is written
    as a sum of non-negative terms for either sign of alpha.  For
    |alpha| < ALPHA_SERIES_SWITCH the first-order expansion in alpha is
    returned.  Broadcasts over array arguments and is exactly symmetric in
    (q_i, q_j).
    """
    a = np.asarray(q_i, dtype=float)
    b = np.asarray(q_j, dtype=float)
    x, y = np.minimum(a, b), np.maximum(a, b)
    al = np.asarray(alpha, dtype=float)
    if np.any(al <= -1.0):
        raise ValueError("alpha must exceed -1")
    s = 1.0 / (1.0 + al)
    w = al * s
    xy = x * y
    Q = s + w * (x + y)
    D = np.where(al >= 0.0, (s + w * (x - y)) ** 2 + 4.0 * w * s * y * (1.0 - x), Q * Q - 4.0 * w * xy)
    r = np.sqrt(D)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.where(Q >= 0.0, 2.0 * xy / (Q + r), (Q - r) / (2.0 * w))
    series = xy + al * xy * (1.0 - x) * (1.0 - y)
    out = np.where(np.abs(al) < ALPHA_SERIES_SWITCH, series, root)
    return float(out) if out.ndim == 0 else out


def t_ij(q_i, q_j, xi):
    """T_ij = q_i q_j (1-q_i)(1-q_j) - (xi - q_i q_j)**2.

    Raises ``FloatingPointError`` when the result is not positive, which
    signals an inconsistent ``xi`` or a point too close to the boundary.
    """
    qi, qj, x = (np.asarray(v, dtype=float) for v in (q_i, q_j, xi))
    T = qi * qj * (1.0 - qi) * (1.0 - qj) - (x - qi * qj) ** 2
    if np.any(~(T > 0)):
        raise FloatingPointError("T_ij is not positive")
    return float(T) if T.ndim == 0 else T


class EdgeAux(NamedTuple):
    """Per-edge derived quantities."""

    alpha: np.ndarray
    Q: np.ndarray
    xi: np.ndarray
    T: np.ndarray


def _tables(qi, qj, alpha, alpha_minus):
    """Four table entries, each from its own well-conditioned root.

    The off-diagonal entries solve the reflected problem (q_i, 1 - q_j) with
    the sign of the coupling flipped, which avoids forming q_i - xi.
    """
    pi, pj = 1.0 - qi, 1.0 - qj
    a = xi_star(qi, qj, alpha)
    b = xi_star(qi, pj, alpha_minus)
    c = xi_star(pi, qj, alpha_minus)
    e = xi_star(pi, pj, alpha)
    return a, b, c, e


def _t_from_tables(a, b, c, e):
    # Sum of positive terms; algebraically equal to the defining expression.
    return (a * e + b * c) * (a + e) * (b + c) + (a * b + c * e) * (a * c + b * e) + 4.0 * a * b * c * e


def edge_aux(model: Model, q) -> EdgeAux:
    """alpha, Q, xi* and T for every edge at the (clamped) point q."""
    q = clamp(q)
    i, j = model.edges[:, 0], model.edges[:, 1]
    alpha = edge_alpha(model)
    alpha_m = np.expm1(-4.0 * model.beta * model.couplings)
    a, b, c, e = _tables(q[i], q[j], alpha, alpha_m)
    Q = 1.0 + alpha * (q[i] + q[j])
    return EdgeAux(alpha, Q, a, _t_from_tables(a, b, c, e))


def _binary_entropy(q):
    return -(q * np.log(q) + (1.0 - q) * np.log1p(-q))


class _TableKernel:
    """Batched evaluation of the four table entries of every edge.

    Each entry is the stationary root for some pair (u, v) drawn from
    [q, 1 - q] with coupling parameter alpha or its reflection
    exp(-4 beta J) - 1.  Entries are grouped by the sign of their alpha so
    each group runs a single branch-free formula.
    """

    def __init__(self, model: Model):
        n, E = model.node_count, model.edge_count
        i, j = model.edges[:, 0], model.edges[:, 1]
        alpha = np.expm1(4.0 * model.beta * model.couplings)
        alpha_m = np.expm1(-4.0 * model.beta * model.couplings)
        # entry k of edge e sits at slot k * E + e; u, v index into z = [q, 1 - q]
        u = np.concatenate([i, i, i + n, i + n])
        v = np.concatenate([j, j + n, j, j + n])
        al = np.concatenate([alpha, alpha_m, alpha_m, alpha])
        self.size = 4 * E
        self.pos = np.flatnonzero(al >= 0.0)
        self.neg = np.flatnonzero(al < 0.0)
        flip = lambda idx: np.where(idx < n, idx + n, idx - n)  # noqa: E731
        self.pu, self.pv, self.pu_c = u[self.pos], v[self.pos], flip(u[self.pos])
        self.nu, self.nv = u[self.neg], v[self.neg]
        ap, an = al[self.pos], al[self.neg]
        sp = 1.0 / (1.0 + ap)
        self.p_s, self.p_w, self.p_4ws = sp, ap * sp, 4.0 * ap * sp * sp
        sn = 1.0 / (1.0 + an)
        self.n_s, self.n_w, self.n_4w, self.n_2w = sn, an * sn, 4.0 * an * sn, 2.0 * an * sn
        self.p_tiny = np.abs(ap) < ALPHA_SERIES_SWITCH
        self.n_tiny = np.abs(an) < ALPHA_SERIES_SWITCH
        self.p_al, self.n_al = ap, an
        self.E = E

    def __call__(self, q: np.ndarray):
        z = np.concatenate([q, 1.0 - q])
        out = np.empty(self.size)
        if self.pos.size:
            x, y = z[self.pu], z[self.pv]
            xy = x * y
            Q = self.p_s + self.p_w * (x + y)
            D = (self.p_s + self.p_w * (x - y)) ** 2 + self.p_4ws * y * z[self.pu_c]
            r = 2.0 * xy / (Q + np.sqrt(D))
            if self.p_tiny.any():
                t = self.p_tiny
                r[t] = xy[t] + self.p_al[t] * xy[t] * (1.0 - x[t]) * (1.0 - y[t])
            out[self.pos] = r
        if self.neg.size:
            x, y = z[self.nu], z[self.nv]
            xy = x * y
            Q = self.n_s + self.n_w * (x + y)
            rt = np.sqrt(Q * Q - self.n_4w * xy)
            # Q + rt > 0 strictly and n_2w < 0, so neither form divides by zero
            r = np.where(Q >= 0.0, 2.0 * xy / (Q + rt), (Q - rt) / self.n_2w)
            if self.n_tiny.any():
                t = self.n_tiny
                r[t] = xy[t] + self.n_al[t] * xy[t] * (1.0 - x[t]) * (1.0 - y[t])
            out[self.neg] = r
        E = self.E
        return out[:E], out[E : 2 * E], out[2 * E : 3 * E], out[3 * E :]


class BetheFunction:
    """Free energy, gradient and Hessian of a fixed model on the Bethe box.

    Precomputes the per-edge constants once so repeated evaluations (as in
    the optimizer) only pay for the vectorized table computation.
    """

    def __init__(self, model: Model, eps_box: float = EPS_BOX):
        self.model = model
        self.eps_box = eps_box
        self.n = model.node_count
        self.i = model.edges[:, 0]
        self.j = model.edges[:, 1]
        self.J = model.couplings
        self.theta = model.fields
        self.beta = model.beta
        self.deg = model.degrees.astype(float)
        self.alpha = np.expm1(4.0 * self.beta * self.J)
        self.alpha_m = np.expm1(-4.0 * self.beta * self.J)
        self._kernel = _TableKernel(model)
        self._grad_const = -2.0 * self.theta + 2.0 * (
            np.bincount(self.i, self.J, self.n) + np.bincount(self.j, self.J, self.n)
        )

    def tables(self, q) -> np.ndarray:
        """(E, 4) array of pairwise tables in the order ++, +-, -+, --."""
        q = clamp(q, self.eps_box)
        return np.stack(self._kernel(q), axis=1)

    def _terms(self, q):
        q = clamp(q, self.eps_box)
        a, b, c, e = self._kernel(q)
        return q, a, b, c, e

    def _value(self, q, a, b, c, e) -> float:
        energy = -np.dot(self.J, a + e - b - c) + np.dot(1.0 - 2.0 * q, self.theta)
        s_pair = -(a * np.log(a) + b * np.log(b) + c * np.log(c) + e * np.log(e))
        s_node = _binary_entropy(q)
        entropy = s_pair.sum() - np.dot(self.deg - 1.0, s_node)
        return float(energy - entropy / self.beta)

    def _gradient(self, q, a, b, c, e) -> np.ndarray:
        le = np.log(e)
        log_ratio = (self.deg - 1.0) * (np.log1p(-q) - np.log(q))
        log_ratio += np.bincount(self.i, np.log(b) - le, self.n)
        log_ratio += np.bincount(self.j, np.log(c) - le, self.n)
        return self._grad_const + log_ratio / self.beta

    def value(self, q) -> float:
        return self._value(*self._terms(q))

    def gradient(self, q) -> np.ndarray:
        return self._gradient(*self._terms(q))

    def value_and_gradient(self, q) -> tuple[float, np.ndarray]:
        t = self._terms(q)
        return self._value(*t), self._gradient(*t)

    def hessian(self, q) -> np.ndarray:
        q, a, b, c, e = self._terms(q)
        T = _t_from_tables(a, b, c, e)
        v = q * (1.0 - q)
        diag = -(self.deg - 1.0) / v
        diag += np.bincount(self.i, v[self.j] / T, self.n)
        diag += np.bincount(self.j, v[self.i] / T, self.n)
        H = np.zeros((self.n, self.n))
        H[np.diag_indices(self.n)] = diag
        off = (b * c - a * e) / T
        H[self.i, self.j] = off
        H[self.j, self.i] = off
        return H / self.beta


def bethe_free_energy(model: Model, q) -> float:
    """F_B(q) with every pairwise table fixed at xi*."""
    return BetheFunction(model).value(q)


def bethe_gradient(model: Model, q) -> np.ndarray:
    """Analytic gradient of F_B on the Bethe box."""
    return BetheFunction(model).gradient(q)


def bethe_hessian(model: Model, q) -> np.ndarray:
    """Dense symmetric Hessian of F_B; zero off the adjacency pattern.

    Independent of the fields theta.
    """
    return BetheFunction(model).hessian(q)


def pairwise_marginals_from_q(model: Model, q) -> np.ndarray:
    """Pairwise tables (E, 4): P(++), P(+-), P(-+), P(--) per edge."""
    return BetheFunction(model).tables(q)


def xi_derivatives(q_i, q_j, alpha):
    """First and second partial derivatives of xi*(q_i, q_j).

    Returns
    -------
    tuple
        (d/dq_i, d/dq_j, d2/dq_i2, d2/dq_i dq_j, d2/dq_j2), each broadcast
        over the inputs.
    """
    qi = np.asarray(q_i, dtype=float)
    qj = np.asarray(q_j, dtype=float)
    al = np.asarray(alpha, dtype=float)
    xi = xi_star(qi, qj, al)
    A = 1.0 + al * (qi + qj - 2.0 * xi)
    Ni = al * (qj - xi) + qj
    Nj = al * (qi - xi) + qi
    d_i = Ni / A
    d_j = Nj / A
    A2 = A * A
    d_ii = al * (-d_i * A - Ni * (1.0 - 2.0 * d_i)) / A2
    d_jj = al * (-d_j * A - Nj * (1.0 - 2.0 * d_j)) / A2
    d_ij = ((al * (1.0 - d_j) + 1.0) * A - al * Ni * (1.0 - 2.0 * d_j)) / A2
    out = (d_i, d_j, d_ii, d_ij, d_jj)
    if np.ndim(xi) == 0:
        return tuple(float(v) for v in out)
    return out
