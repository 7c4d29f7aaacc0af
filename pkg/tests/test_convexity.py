import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from bethe.bethe_core import bethe_hessian, xi_star
from bethe.convexity import (
    certify,
    critical_beta_diag_dominance,
    det_h2x2,
    det_h2x2_params,
    diag_dominance_certified,
    diag_dominance_margin,
    edge_beta_star,
    psi_polynomial,
    psi_positive_on_interval,
    r_plus,
    r_plus_boundary_infimum,
    sturm_root_count,
    sum_decomposition_hessians,
    symmetric_model_thresholds,
)
from bethe.graph_model import Model, complete_edges

from conftest import k4, random_model


def star(d, J, beta=1.0):
    """Node 0 joined to d leaves."""
    return Model.from_edges(d + 1, [(0, k, J) for k in range(1, d + 1)], beta=beta)


class TestPsi:
    def test_constant_term_is_one(self, rng):
        for _ in range(20):
            m = random_model(rng, n=7, p=0.6)
            for i in range(m.node_count):
                p = psi_polynomial(m, i)
                assert p.coefficients[0] == pytest.approx(1.0, abs=1e-12)
                assert p.degree <= m.degrees[i] + 1

    def test_leaf(self):
        m = Model.from_edges(2, [(0, 1, 0.7)], beta=1.3)
        p = psi_polynomial(m, 0)
        a = math.expm1(4 * 1.3 * 0.7)
        assert_allclose(p.coefficients, [1.0, 0.0, a], atol=1e-12)
        assert psi_positive_on_interval(p)

    def test_isolated_node(self):
        m = Model(2, np.zeros((0, 2), int), [], [0.0, 0.0], 1.0)
        p = psi_polynomial(m, 0)
        assert_allclose(p.coefficients, [1.0])
        assert psi_positive_on_interval(p)

    def test_matches_product_form(self, rng):
        m = random_model(rng, n=6, p=0.8)
        for i in range(6):
            p = psi_polynomial(m, i)
            a = p.alphas
            for q in rng.uniform(0, 1, 5):
                prod = np.prod(1 + a * q)
                direct = -(len(a) - 1) * prod + sum(
                    (1 + a[j] * q * q) * prod / (1 + a[j] * q) for j in range(len(a))
                )
                assert p(q) == pytest.approx(direct, rel=1e-10)

    def test_uses_absolute_coupling(self):
        a = psi_polynomial(star(3, 0.5), 0)
        b = psi_polynomial(star(3, -0.5), 0)
        assert_allclose(a.coefficients, b.coefficients)

    def test_fig5_node(self):
        assert psi_positive_on_interval(psi_polynomial(star(3, 0.5, 0.25), 0))
        assert not psi_positive_on_interval(psi_polynomial(star(3, 0.5, 0.75), 0))

    def test_homogeneous_quadratic(self):
        # all-equal alphas: positivity reduces to -(d-1)(1 + a q) + d (1 + a q^2)
        for d in range(3, 9):
            for beta in (0.05, 0.2, 0.5, 1.0):
                m = star(d, 1.0, beta)
                a = math.expm1(4 * beta)
                q = np.linspace(1e-6, 0.5, 20001)
                quad_positive = np.all(-(d - 1) * (1 + a * q) + d * (1 + a * q * q) > 0)
                assert psi_positive_on_interval(psi_polynomial(m, 0)) == quad_positive

    def test_infinite_temperature(self):
        m = star(5, 1.0, 1e-12)
        assert psi_positive_on_interval(psi_polynomial(m, 0))

    def test_against_dense_sampling(self, rng):
        q = np.concatenate([np.linspace(1e-7, 0.5, 100000), np.geomspace(1e-9, 1e-2, 2000)])
        disagreements = 0
        for _ in range(60):
            d = int(rng.integers(2, 9))
            J = rng.uniform(-1, 1, d)
            m = Model.from_edges(d + 1, [(0, k + 1, J[k]) for k in range(d)], beta=float(rng.uniform(0.05, 2)))
            p = psi_polynomial(m, 0)
            sampled = bool(np.all(p.rational(q) > 0))
            verdict = psi_positive_on_interval(p)
            # the certificate may be more conservative, never less
            assert not (verdict and not sampled)
            disagreements += verdict != sampled
        assert disagreements == 0


class TestSturm:
    def test_known_roots(self):
        c = np.polynomial.polynomial.polyfromroots([0.1, 0.3, 0.7])
        assert sturm_root_count(c, 0.0, 0.5) == 2
        assert sturm_root_count(c, 0.0, 1.0) == 3
        assert sturm_root_count(c, 0.31, 0.5) == 0

    def test_double_root_counted_once(self):
        c = np.polynomial.polynomial.polyfromroots([0.25, 0.25, 2.0])
        assert sturm_root_count(c, 0.0, 0.5) == 1

    def test_constant(self):
        assert sturm_root_count([3.0], 0.0, 1.0) == 0


class TestCriticalBeta:
    def test_fig5(self):
        assert critical_beta_diag_dominance(star(3, 0.5)) == pytest.approx(math.log(2), abs=1e-3)

    @pytest.mark.parametrize("d", [3, 4, 6, 9])
    @pytest.mark.parametrize("J", [0.5, 1.0, -0.8])
    def test_homogeneous_closed_form(self, d, J):
        m = Model(d + 1, complete_edges(d + 1), np.full((d + 1) * d // 2, J), np.zeros(d + 1), 1.0)
        expected = symmetric_model_thresholds(d, J).diag_dominance
        got = critical_beta_diag_dominance(m, tol=1e-4)
        assert got - 1e-4 <= expected + 1e-12 and got >= expected - 1e-12

    def test_path_never_fails(self):
        m = Model.from_edges(6, [(k, k + 1, 0.25) for k in range(5)])
        assert critical_beta_diag_dominance(m, beta_max=2.0) is None

    def test_monotone_predicate(self, rng):
        m = random_model(rng, n=6, p=0.7)
        b = critical_beta_diag_dominance(m)
        if b is not None:
            assert diag_dominance_certified(m, b * 0.98)[0]
            assert not diag_dominance_certified(m, b)[0]
            assert not diag_dominance_certified(m, b * 1.5)[0]

    def test_rejects_nonpositive_beta_max(self):
        with pytest.raises(ValueError):
            critical_beta_diag_dominance(star(3, 1.0), beta_max=0.0)


class TestEdgeBetaStar:
    def test_k4(self):
        assert edge_beta_star(3, 3, 1.0) == pytest.approx(0.5 * math.log(3), abs=1e-12)
        assert edge_beta_star(3, 3, 1.0) == pytest.approx(math.atanh(0.5), abs=1e-12)

    def test_half_coupling(self):
        assert edge_beta_star(3, 3, 0.5) == pytest.approx(math.log(3), abs=1e-12)

    @pytest.mark.parametrize("d", range(3, 15))
    def test_regular_form(self, d):
        assert edge_beta_star(d, d, 0.7) == pytest.approx(math.log(d / (d - 2)) / 1.4, rel=1e-12)

    def test_unconstrained(self):
        assert edge_beta_star(1, 10, 1.0) == math.inf
        assert edge_beta_star(2, 2, 1.0) == math.inf
        assert edge_beta_star(4, 4, 0.0) == math.inf

    def test_degree_two_rule(self):
        assert math.isfinite(edge_beta_star(2, 5, 1.0))
        assert edge_beta_star(2, 5, 1.0, strict_degree_rule=True) == math.inf

    @pytest.mark.parametrize("di,dj", [(2, 3), (2, 7), (3, 3), (3, 5), (4, 4), (5, 9)])
    def test_center_sign_change(self, di, dj):
        J = 0.8
        b = edge_beta_star(di, dj, J)
        assert abs(det_h2x2_params(di, dj, J, b, 0.5, 0.5)) < 1e-8
        assert det_h2x2_params(di, dj, J, b * 0.99, 0.5, 0.5) > 0
        assert det_h2x2_params(di, dj, J, b * 1.01, 0.5, 0.5) < 0

    @pytest.mark.parametrize("di,dj", [(2, 3), (3, 3), (3, 7), (4, 4)])
    def test_center_is_the_minimum_at_threshold(self, di, dj):
        J = 1.0
        b = edge_beta_star(di, dj, J)
        g = np.linspace(1e-3, 1 - 1e-3, 201)
        qi, qj = np.meshgrid(g, g)
        det = det_h2x2_params(di, dj, J, b, qi, qj)
        assert det.min() >= -1e-8
        near_zero = np.abs(det) < 1e-6
        assert np.all(np.abs(qi[near_zero] - 0.5) < 0.02) and np.all(np.abs(qj[near_zero] - 0.5) < 0.02)

    def test_antiferro_same(self):
        assert edge_beta_star(3, 4, -0.6) == edge_beta_star(3, 4, 0.6)


class TestDeterminant:
    def test_infinite_temperature(self):
        assert det_h2x2_params(3, 3, 1.0, 1e-12, 0.5, 0.5) == pytest.approx(16 / 9, rel=1e-9)

    def test_monotone_in_beta(self, rng):
        betas = np.linspace(0.01, 3.0, 20)
        for _ in range(25):
            qi, qj = rng.uniform(0.01, 0.99, 2)
            d = det_h2x2_params(3, 4, 0.9, betas, qi, qj)
            assert np.all(np.diff(d) < 0)

    def test_model_wrapper_orientation(self):
        m = Model.from_edges(5, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (1, 4, 1.0)], beta=0.4)
        a = det_h2x2(m, (0, 1), 0.3, 0.8)
        b = det_h2x2(m, (1, 0), 0.8, 0.3)
        assert a == b
        with pytest.raises(KeyError):
            det_h2x2(m, (2, 3), 0.5, 0.5)


class TestSumDecomposition:
    def test_sum_equals_hessian(self, rng):
        for _ in range(50):
            m = random_model(rng, n=int(rng.integers(2, 9)), p=0.6)
            keep = np.bincount(m.edges.ravel(), minlength=m.node_count) > 0
            q = rng.uniform(0.01, 0.99, m.node_count)
            H = bethe_hessian(m, q)
            S = sum(e.to_dense(m.node_count) for e in sum_decomposition_hessians(m, q))
            assert_allclose(S[np.ix_(keep, keep)], H[np.ix_(keep, keep)], rtol=0, atol=1e-10 * max(1, np.abs(H).max()))

    def test_single_edge(self):
        m = Model.from_edges(2, [(0, 1, 0.9)], beta=0.7)
        q = np.array([0.2, 0.9])
        (e,) = sum_decomposition_hessians(m, q)
        assert_allclose(e.to_dense(2), bethe_hessian(m, q), rtol=1e-14)

    def test_first_minor_positive(self, rng):
        m = random_model(rng, n=8, p=0.7, beta=2.0)
        for e in sum_decomposition_hessians(m, rng.uniform(0.01, 0.99, 8)):
            assert e.block[0, 0] > 0 and e.block[1, 1] > 0

    def test_block_determinant_matches_formula(self, rng):
        m = random_model(rng, n=7, p=0.8)
        q = rng.uniform(0.05, 0.95, 7)
        for e in sum_decomposition_hessians(m, q):
            ref = det_h2x2(m, (e.i, e.j), q[e.i], q[e.j]) / m.beta**2
            assert np.linalg.det(e.block) == pytest.approx(ref, rel=1e-9, abs=1e-12)


class TestRPlus:
    @pytest.mark.parametrize("qi", [0.05, 0.3, 0.5, 0.62, 0.9])
    @pytest.mark.parametrize("alpha", [0.5, 5.0, 50.0])
    def test_infimum_at_boundary(self, qi, alpha):
        qj = np.linspace(1e-6, 1 - 1e-6, 200001)
        r = r_plus(qi, qj, alpha)
        inf = r_plus_boundary_infimum(qi, alpha)
        assert r.min() >= inf * (1 - 1e-6)
        assert r.min() == pytest.approx(inf, rel=1e-4)

    @pytest.mark.parametrize("qi", [0.2, 0.5, 0.7])
    def test_interior_maximum(self, qi):
        alpha = 3.0
        qj = np.linspace(1e-4, 1 - 1e-4, 100001)
        r = r_plus(qi, qj, alpha)
        k = int(np.argmax(r))
        assert qj[k] == pytest.approx(1 - qi, abs=1e-3)
        assert r[k] == pytest.approx(1 / xi_star(qi, 1 - qi, alpha), rel=1e-6)

    def test_margin_consistent_with_certificate(self, rng):
        for _ in range(10):
            m = random_model(rng, n=6, p=0.6)
            b = critical_beta_diag_dominance(m)
            if b is None:
                continue
            mm = m.with_beta(0.95 * b)
            for q in rng.uniform(1e-4, 1 - 1e-4, (200, 6)):
                assert np.all(diag_dominance_margin(mm, q) > 0)


class TestThresholds:
    def test_table_values(self):
        t = symmetric_model_thresholds(3, 1.0)
        assert t.exact == pytest.approx(0.5493061443340549, abs=1e-12)
        assert t.dobrushin == pytest.approx(0.3465735902799727, abs=1e-12)
        assert t.simon == pytest.approx(1 / 3, abs=1e-15)
        assert t.diag_dominance == pytest.approx(math.log(2) / 2, abs=1e-12)
        assert t.heskes == pytest.approx(math.log(2) / 4, abs=1e-12)

    @pytest.mark.parametrize("d", range(3, 21))
    def test_ordering(self, d):
        t = symmetric_model_thresholds(d, 1.0)
        assert t.heskes <= t.simon <= t.diag_dominance <= t.exact
        assert t.dobrushin <= t.exact

    def test_scales_with_coupling(self):
        a, b = symmetric_model_thresholds(5, 1.0), symmetric_model_thresholds(5, -0.25)
        assert_allclose(np.array(b), 4 * np.array(a), rtol=1e-14)

    @pytest.mark.parametrize("d,J", [(2, 1.0), (5, 0.0)])
    def test_rejects(self, d, J):
        with pytest.raises(ValueError):
            symmetric_model_thresholds(d, J)


class TestCertify:
    def test_high_temperature(self, rng):
        for _ in range(10):
            r = certify(random_model(rng, beta=1e-6), critical=False)
            assert r.diag_dominance_convex and r.sum_decomposition_convex

    def test_k10_cold(self):
        m = Model(10, complete_edges(10), np.linspace(0.1, 1, 45), np.zeros(10), 2.0)
        r = certify(m)
        assert not r.diag_dominance_convex and not r.sum_decomposition_convex
        assert not r.convex_certified

    def test_k4(self):
        r = certify(k4(1.0, beta=0.5))
        assert r.sum_decomposition_convex
        assert r.beta_star_sum == pytest.approx(0.5 * math.log(3), abs=1e-12)
        assert not certify(k4(1.0, beta=0.6)).sum_decomposition_convex

    def test_diag_consistent_with_hessian(self, rng):
        for _ in range(10):
            m = random_model(rng, n=6, p=0.6)
            b = critical_beta_diag_dominance(m)
            if b is None:
                continue
            mm = m.with_beta(0.9 * b)
            assert certify(mm, critical=False).diag_dominance_convex
            for q in rng.uniform(1e-4, 1 - 1e-4, (100, 6)):
                np.linalg.cholesky(bethe_hessian(mm, q))

    def test_json(self):
        m = Model.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)], beta=0.5)
        d = json.loads(certify(m, beta_max=0.5).to_json())
        assert d["beta_star_sum"] is None and d["beta_star_diag"] is None
        # a degree-2 node first fails at alpha = 8
        d = json.loads(certify(m).to_json())
        assert d["beta_star_diag"] == pytest.approx(math.log(9) / 4, abs=1e-4)
        assert d["per_edge"] == [None, None]
        assert d["diag_convex"] is True and d["sum_convex"] is True

    def test_strict_rule(self):
        m = Model.from_edges(5, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (1, 4, 1.0)], beta=5.0)
        assert certify(m, critical=False, strict_degree_rule=True).sum_decomposition_convex
        assert not certify(m, critical=False).sum_decomposition_convex

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_report_invariants(self, seed):
        rng = np.random.default_rng(seed)
        m = random_model(rng, n=6)
        r = certify(m, critical=False)
        assert r.diag_dominance_convex == bool(np.all(r.per_node_psi_positive))
        assert r.sum_decomposition_convex == bool(np.all(m.beta < r.per_edge_beta_star))
