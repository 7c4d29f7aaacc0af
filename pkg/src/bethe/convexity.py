"""Sufficient conditions for convexity of the Bethe free energy on the Bethe box.

Two certificates are implemented.

Diagonal dominance
    The Hessian is diagonally dominant on the whole box iff, for every node
    i, the polynomial

        Psi_i(q) = -(d_i - 1) prod_j (1 + a_j q) + sum_j (1 + a_j q^2) prod_{k != j} (1 + a_k q),
        a_j = exp(4 beta |J_ij|) - 1,

    has no root in (0, 0.5].  Positivity is decided by Sturm root counting
    cross-checked against dense sampling of Psi_i / prod_j (1 + a_j q).

Edge sum decomposition
    The Hessian is split into one sparse matrix per edge, with the node
    entropy terms shared out as s_ij = 1 / d_i.  Each edge matrix is
    positive semidefinite on the whole box iff beta is below the closed-form
    threshold arccosh(1 + 2 / (d_i d_j - d_i - d_j)) / (2 |J_ij|).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import minimize_scalar

from .bethe_core import _t_from_tables, _tables, bethe_hessian, clamp, xi_star
from .graph_model import Model

__all__ = [
    "TOL_BETA",
    "BETA_MAX",
    "STURM_DELTA",
    "N_SAMPLES",
    "PsiPolynomial",
    "psi_polynomial",
    "psi_positive_on_interval",
    "sturm_sequence",
    "sturm_root_count",
    "critical_beta_diag_dominance",
    "diag_dominance_certified",
    "edge_beta_star",
    "det_h2x2",
    "det_h2x2_params",
    "EdgeHessian",
    "sum_decomposition_hessians",
    "SymmetricThresholds",
    "symmetric_model_thresholds",
    "ConvexityReport",
    "certify",
    "r_plus",
    "r_plus_boundary_infimum",
    "diag_dominance_margin",
]

TOL_BETA = 1e-4
BETA_MAX = 5.0
STURM_DELTA = 1e-12
N_SAMPLES = 4096


# --------------------------------------------------------------------------
# Psi polynomials
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PsiPolynomial:
    """Psi_i in ascending-power coefficients, with the alphas it came from."""

    node: int
    coefficients: np.ndarray
    alphas: np.ndarray

    @property
    def degree(self) -> int:
        return self.coefficients.shape[0] - 1

    def __call__(self, q):
        return P.polyval(q, self.coefficients)

    def rational(self, q):
        """Psi(q) / prod_j (1 + a_j q); same sign as Psi on q >= 0, better conditioned."""
        q = np.asarray(q, dtype=float)
        d = self.alphas.shape[0]
        a = self.alphas.reshape((-1,) + (1,) * q.ndim)
        return -(d - 1.0) + np.sum((1.0 + a * q**2) / (1.0 + a * q), axis=0)


def _psi_coefficients(alphas: np.ndarray) -> np.ndarray:
    d = alphas.shape[0]
    lin = [np.array([1.0, a]) for a in alphas]
    full = np.array([1.0])
    for f in lin:
        full = P.polymul(full, f)
    coeffs = -(d - 1.0) * full
    for j in range(d):
        term = np.array([1.0, 0.0, alphas[j]])
        for k in range(d):
            if k != j:
                term = P.polymul(term, lin[k])
        coeffs = P.polyadd(coeffs, term)
    return np.asarray(coeffs, dtype=float)


def psi_polynomial(model: Model, i: int, beta: float | None = None) -> PsiPolynomial:
    """Psi_i for node ``i`` at the model's beta (or ``beta`` if given).

    Couplings enter through |J_ij|: antiferromagnetic edges reduce to the
    ferromagnetic case by reflecting q_j -> 1 - q_j.
    """
    if not (0 <= int(i) < model.node_count):
        raise IndexError(f"node {i} out of range")
    b = model.beta if beta is None else float(beta)
    alphas = np.expm1(4.0 * b * np.abs(model.incident_couplings(int(i))))
    return PsiPolynomial(int(i), _psi_coefficients(alphas), alphas)


# --------------------------------------------------------------------------
# Sturm sequences
# --------------------------------------------------------------------------

def _trim(c: np.ndarray, delta: float, ref_scale: float | None = None) -> np.ndarray:
    """Zero coefficients below ``delta * ref_scale``, then rescale to unit max-norm.

    ``ref_scale`` defaults to the max-norm of ``c`` itself; remainders pass
    the scale of their dividend so that pure roundoff is recognised as zero.
    """
    c = np.asarray(c, dtype=float)
    own = np.max(np.abs(c)) if c.size else 0.0
    ref = own if ref_scale is None else max(ref_scale, own)
    if own <= delta * ref:
        return np.zeros(1)
    c = np.where(np.abs(c) <= delta * ref, 0.0, c / own)
    nz = np.flatnonzero(c)
    return c[: nz[-1] + 1] if nz.size else np.zeros(1)


def sturm_sequence(coefficients, delta: float = STURM_DELTA) -> list[np.ndarray]:
    """Sturm chain p0 = p, p1 = p', p_{k+1} = -rem(p_{k-1}, p_k).

    Each member is rescaled to unit max-norm and coefficients below
    ``delta`` times that norm are treated as zero.
    """
    p0 = _trim(coefficients, delta)
    if p0.shape[0] == 1:
        return [p0]
    chain = [p0, _trim(P.polyder(p0), delta)]
    while chain[-1].shape[0] > 1:
        _, rem = P.polydiv(chain[-2], chain[-1])
        rem = _trim(-rem, delta, ref_scale=1.0)
        if rem.shape[0] == 1 and rem[0] == 0.0:
            break
        chain.append(rem)
    return chain


def _sign_changes(chain: list[np.ndarray], x: float) -> int:
    vals = np.array([P.polyval(x, c) for c in chain])
    s = np.sign(vals[vals != 0.0])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def sturm_root_count(coefficients, a: float, b: float, delta: float = STURM_DELTA) -> int:
    """Number of distinct real roots in the half-open interval (a, b]."""
    chain = sturm_sequence(coefficients, delta)
    if len(chain) == 1:
        return 0
    return _sign_changes(chain, a) - _sign_changes(chain, b)


def _sample_grid(n: int = N_SAMPLES) -> np.ndarray:
    half = n // 2
    lin = np.linspace(0.5 / half, 0.5, half)
    geo = np.geomspace(1e-9, 0.5, n - half)
    return np.unique(np.concatenate([lin, geo]))


_GRID = _sample_grid()


def _sampled_minimum(poly: PsiPolynomial) -> float:
    """Minimum of the rational form on (0, 0.5] from a dense grid plus local refinement."""
    vals = poly.rational(_GRID)
    k = int(np.argmin(vals))
    best = float(vals[k])
    lo = _GRID[max(k - 1, 0)]
    hi = _GRID[min(k + 1, _GRID.shape[0] - 1)]
    if hi > lo:
        res = minimize_scalar(lambda t: float(poly.rational(t)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        best = min(best, float(res.fun))
    return best


def psi_positive_on_interval(poly: PsiPolynomial, delta: float = STURM_DELTA) -> bool:
    """True iff Psi has no root in (0, 0.5].

    Both a Sturm count (in a rescaled variable so the coefficients stay
    balanced for large alphas) and a sampled minimum must agree on
    positivity; any disagreement is reported as not positive.
    """
    if poly.alphas.shape[0] <= 1:
        return True  # Psi = 1 or 1 + a q^2
    scale = max(1.0, float(np.max(poly.alphas)))
    c = poly.coefficients / scale ** np.arange(poly.coefficients.shape[0])
    sturm_ok = sturm_root_count(c, 0.0, 0.5 * scale, delta) == 0
    sample_ok = _sampled_minimum(poly) > 0.0
    return bool(sturm_ok and sample_ok)


def _node_signatures(model: Model) -> list[tuple[float, ...]]:
    sig = {}
    for i in range(model.node_count):
        key = tuple(sorted(np.abs(model.incident_couplings(i)).tolist()))
        sig.setdefault(key, i)
    return list(sig.items())


def diag_dominance_certified(model: Model, beta: float | None = None) -> tuple[bool, np.ndarray]:
    """(all nodes positive, per-node verdicts) at ``beta`` (default: model beta)."""
    b = model.beta if beta is None else float(beta)
    verdict_by_sig = {}
    per_node = np.empty(model.node_count, dtype=bool)
    for i in range(model.node_count):
        key = tuple(sorted(np.abs(model.incident_couplings(i)).tolist()))
        if key not in verdict_by_sig:
            verdict_by_sig[key] = psi_positive_on_interval(psi_polynomial(model, i, b))
        per_node[i] = verdict_by_sig[key]
    return bool(per_node.all()), per_node


def critical_beta_diag_dominance(
    model: Model, beta_max: float = BETA_MAX, tol: float = TOL_BETA
) -> float | None:
    """Smallest beta in (0, beta_max] at which some Psi_i has a root in (0, 0.5].

    Located by bisection to ``tol``; the returned value is the failing end
    of the final bracket.  Returns None if every Psi_i stays positive up to
    ``beta_max``.
    """
    if beta_max <= 0:
        raise ValueError("beta_max must be positive")
    sigs = _node_signatures(model)

    def ok(b: float) -> bool:
        for key, i in sigs:
            if not psi_positive_on_interval(psi_polynomial(model, i, b)):
                return False
        return True

    if ok(beta_max):
        return None
    lo, hi = 0.0, float(beta_max)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return hi


# --------------------------------------------------------------------------
# Edge sum decomposition
# --------------------------------------------------------------------------

def edge_beta_star(d_i: int, d_j: int, J: float, strict_degree_rule: bool = False) -> float:
    """Critical beta of the edge-specific 2x2 determinant.

    Finite whenever D = d_i d_j - d_i - d_j > 0; for D <= 0 (a degree-1
    endpoint, or both degrees 2) the determinant is positive at every beta
    and +inf is returned, as it is for J = 0.  With
    ``strict_degree_rule=True`` every edge with an endpoint of degree <= 2
    is treated as unconstrained.
    """
    d_i, d_j = int(d_i), int(d_j)
    if J == 0.0:
        return math.inf
    if strict_degree_rule and (d_i <= 2 or d_j <= 2):
        return math.inf
    D = d_i * d_j - d_i - d_j
    if D <= 0:
        return math.inf
    return math.acosh(1.0 + 2.0 / D) / (2.0 * abs(J))


def det_h2x2_params(d_i: int, d_j: int, J: float, beta, q_i, q_j):
    """Determinant of the edge 2x2 block (1/beta^2 factor omitted).

    Broadcasts over ``beta``, ``q_i`` and ``q_j``.
    """
    beta, qi, qj = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (beta, q_i, q_j)))
    alpha = np.expm1(4.0 * beta * J)
    alpha_m = np.expm1(-4.0 * beta * J)
    T = _t_from_tables(*_tables(qi, qj, alpha, alpha_m))
    ci = (d_i - 1.0) / d_i
    cj = (d_j - 1.0) / d_j
    out = ci * cj / (qi * qj * (1.0 - qi) * (1.0 - qj)) + (1.0 - ci - cj) / T
    return float(out) if out.ndim == 0 else out


def det_h2x2(model: Model, edge, q_i, q_j):
    """det of the 2x2 block of the edge-specific Hessian of ``edge`` = (i, j)."""
    i, j = int(edge[0]), int(edge[1])
    k = _edge_index(model, i, j)
    J = float(model.couplings[k])
    a, b = model.edges[k]
    if (a, b) != (i, j):
        q_i, q_j = q_j, q_i
        i, j = a, b
    return det_h2x2_params(int(model.degrees[i]), int(model.degrees[j]), J, model.beta, q_i, q_j)


def _edge_index(model: Model, i: int, j: int) -> int:
    a, b = min(i, j), max(i, j)
    hit = np.flatnonzero((model.edges[:, 0] == a) & (model.edges[:, 1] == b))
    if hit.size == 0:
        raise KeyError(f"({i}, {j}) is not an edge")
    return int(hit[0])


class EdgeHessian(NamedTuple):
    """Edge-specific Hessian: a 2x2 block placed at rows/cols (i, j)."""

    i: int
    j: int
    block: np.ndarray

    def to_dense(self, n: int) -> np.ndarray:
        M = np.zeros((n, n))
        idx = [self.i, self.j]
        M[np.ix_(idx, idx)] = self.block
        return M


def sum_decomposition_hessians(model: Model, q) -> list[EdgeHessian]:
    """One edge-specific Hessian per edge with shares s_ij = 1 / d_i.

    Their sum equals the Bethe Hessian on every node with at least one
    edge; an isolated node contributes 1 / (beta q (1 - q)) on its own
    diagonal, which no edge carries.
    """
    q = clamp(q)
    i, j = model.edges[:, 0], model.edges[:, 1]
    alpha = np.expm1(4.0 * model.beta * model.couplings)
    alpha_m = np.expm1(-4.0 * model.beta * model.couplings)
    a, b, c, e = _tables(q[i], q[j], alpha, alpha_m)
    T = _t_from_tables(a, b, c, e)
    v = q * (1.0 - q)
    d = model.degrees.astype(float)
    h_ii = (-(d[i] - 1.0) / (d[i] * v[i]) + v[j] / T) / model.beta
    h_jj = (-(d[j] - 1.0) / (d[j] * v[j]) + v[i] / T) / model.beta
    h_ij = ((b * c - a * e) / T) / model.beta
    return [
        EdgeHessian(int(i[k]), int(j[k]), np.array([[h_ii[k], h_ij[k]], [h_ij[k], h_jj[k]]]))
        for k in range(model.edge_count)
    ]


# --------------------------------------------------------------------------
# Pairwise pieces of the diagonal-dominance margin
# --------------------------------------------------------------------------

def r_plus(q_i, q_j, alpha):
    """(q_j (1 - q_j) - xi* + q_i q_j) / T for a ferromagnetic edge."""
    qi, qj = np.asarray(q_i, float), np.asarray(q_j, float)
    al = np.asarray(alpha, float)
    t = _tables(qi, qj, al, -al / (1.0 + al))
    T = _t_from_tables(*t)
    a, b, c, e = t
    return (qj * (1.0 - qj) + (b * c - a * e)) / T


def r_plus_boundary_infimum(q_i, alpha):
    """inf over q_j in (0, 1) of r_plus(q_i, q_j), attained as q_j -> 0 or 1."""
    qi = np.asarray(q_i, float)
    u = np.minimum(qi, 1.0 - qi)
    return (1.0 + alpha * u**2) / ((1.0 + alpha * u) * qi * (1.0 - qi))


def diag_dominance_margin(model: Model, q) -> np.ndarray:
    """beta * (H_ii - sum_j |H_ij|) per node."""
    H = bethe_hessian(model, q) * model.beta
    off = np.abs(H).sum(axis=1) - np.abs(np.diag(H))
    return np.diag(H) - off


# --------------------------------------------------------------------------
# Symmetric reference model
# --------------------------------------------------------------------------

class SymmetricThresholds(NamedTuple):
    exact: float
    dobrushin: float
    simon: float
    diag_dominance: float
    heskes: float


def symmetric_model_thresholds(d: int, J: float) -> SymmetricThresholds:
    """Critical-beta estimates for a d-regular homogeneous model with coupling J."""
    d = int(d)
    if d < 3:
        raise ValueError("thresholds are defined for d >= 3")
    if J == 0:
        raise ValueError("J must be non-zero")
    a = abs(J)
    exact = math.atanh(1.0 / (d - 1)) / a
    dobrushin = math.atanh(1.0 / d) / a if d % 2 else math.atanh(2.0 / d) / (2.0 * a)
    simon = 1.0 / (a * d)
    diag = math.log((d + 1) ** 2 / (d - 1) ** 2) / (4.0 * a)
    heskes = math.log((d - 1) / (d - 2)) / (4.0 * a)
    return SymmetricThresholds(exact, dobrushin, simon, diag, heskes)


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------

@dataclass
class ConvexityReport:
    """Both certificates at one beta, plus their critical-beta estimates.

    ``beta_star_diag`` is None when no Psi root appears up to ``beta_max``;
    ``beta_star_sum`` is +inf when no edge is constrained.  A False verdict
    means "not certified", never "non-convex".
    """

    beta: float
    per_node_psi_positive: np.ndarray
    diag_dominance_convex: bool
    per_edge_beta_star: np.ndarray
    sum_decomposition_convex: bool
    beta_star_diag: float | None
    beta_star_sum: float

    @property
    def convex_certified(self) -> bool:
        return self.diag_dominance_convex or self.sum_decomposition_convex

    def to_dict(self) -> dict:
        fin = lambda x: None if x is None or not math.isfinite(x) else float(x)  # noqa: E731
        return {
            "beta": self.beta,
            "diag_convex": bool(self.diag_dominance_convex),
            "sum_convex": bool(self.sum_decomposition_convex),
            "beta_star_diag": fin(self.beta_star_diag),
            "beta_star_sum": fin(self.beta_star_sum),
            "per_edge": [fin(b) for b in self.per_edge_beta_star],
            "per_node": [bool(v) for v in self.per_node_psi_positive],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def certify(
    model: Model,
    beta_max: float = BETA_MAX,
    tol_beta: float = TOL_BETA,
    strict_degree_rule: bool = False,
    critical: bool = True,
) -> ConvexityReport:
    """Evaluate both certificates at the model's beta.

    With ``critical=False`` the (bisection-based) diagonal critical beta is
    skipped and reported as None.
    """
    diag_ok, per_node = diag_dominance_certified(model)
    deg = model.degrees
    per_edge = np.array(
        [
            edge_beta_star(deg[i], deg[j], J, strict_degree_rule)
            for (i, j), J in zip(model.edges, model.couplings)
        ],
        dtype=float,
    )
    beta_star_sum = float(per_edge.min()) if per_edge.size else math.inf
    sum_ok = bool(model.beta < beta_star_sum)
    beta_star_diag = critical_beta_diag_dominance(model, beta_max, tol_beta) if critical else None
    return ConvexityReport(
        beta=model.beta,
        per_node_psi_positive=per_node,
        diag_dominance_convex=diag_ok,
        per_edge_beta_star=per_edge,
        sum_decomposition_convex=sum_ok,
        beta_star_diag=beta_star_diag,
        beta_star_sum=beta_star_sum,
    )
