import numpy as np
import pytest
from numpy.testing import assert_allclose

from bethe.bethe_core import pairwise_marginals_from_q
from bethe.exact_oracle import ExactSolution, brute_force_solve
from bethe.graph_model import Model
from bethe.metrics import (
    ErrorRecord,
    error_record,
    pairwise_error,
    partition_error,
    restart_errors,
    signed_log_z_gap,
    singleton_error,
)
from bethe.optimizer import MinimizationResult, RestartResult, bethe_min, multi_restart_minimize

from conftest import random_model, random_tree


class TestFormulas:
    def test_singleton_arithmetic(self):
        ex = ExactSolution(0.0, np.array([0.8]), np.zeros((0, 4)))
        assert singleton_error(ex, [0.7]) == pytest.approx(0.2, rel=1e-14)

    def test_singleton_perfect(self, rng):
        ex = brute_force_solve(random_model(rng, n=5))
        assert singleton_error(ex, ex.singleton) == 0.0

    def test_singleton_length_mismatch(self):
        ex = ExactSolution(0.0, np.array([0.5, 0.5]), np.zeros((0, 4)))
        with pytest.raises(ValueError):
            singleton_error(ex, [0.5])

    def test_pairwise_independent(self, rng):
        m = Model.from_edges(4, [(0, 1, 0.0), (1, 2, 0.0), (2, 3, 0.0)], fields=rng.uniform(-1, 1, 4))
        ex = brute_force_solve(m)
        assert pairwise_error(ex, m, ex.singleton) < 1e-12

    def test_pairwise_uses_bethe_tables(self, rng):
        m = random_model(rng, n=5, p=0.7)
        ex = brute_force_solve(m)
        q = rng.uniform(0.1, 0.9, 5)
        ref = np.abs(ex.pairwise - pairwise_marginals_from_q(m, q)).sum(axis=1).mean()
        assert pairwise_error(ex, m, q) == ref

    def test_pairwise_no_edges(self):
        m = Model(2, np.zeros((0, 2), int), [], [0.1, 0.2], 1.0)
        assert pairwise_error(brute_force_solve(m), m, [0.5, 0.5]) == 0.0

    def test_partition(self):
        ex = ExactSolution(2.5, np.array([0.5]), np.zeros((0, 4)))
        assert partition_error(ex, -2.0, 1.5) == pytest.approx(0.5)
        assert signed_log_z_gap(ex, -2.0, 1.5) == pytest.approx(0.5)

    def test_relabel_invariant(self, rng):
        m = random_model(rng, n=6, p=0.6)
        q = rng.uniform(0.1, 0.9, 6)
        perm = rng.permutation(6)
        inv = np.argsort(perm)
        m2 = Model(6, inv[m.edges], m.couplings, m.fields[perm], m.beta)
        q2 = q[perm]
        ex, ex2 = brute_force_solve(m), brute_force_solve(m2)
        assert singleton_error(ex2, q2) == pytest.approx(singleton_error(ex, q), rel=1e-12)
        assert pairwise_error(ex2, m2, q2) == pytest.approx(pairwise_error(ex, m, q), rel=1e-12)


class TestLimits:
    def test_tree_exact(self, rng):
        for _ in range(5):
            m = random_tree(rng, 7, beta=1.0)
            ex = brute_force_solve(m)
            r = bethe_min(m, rng.uniform(0, 1, 7), rng=rng)
            rec = error_record(ex, m, r)
            assert rec.partition_error < 1e-6
            assert rec.singleton_error < 1e-6
            assert rec.pairwise_error < 1e-6

    def test_single_edge(self):
        m = Model.from_edges(2, [(0, 1, 0.9)], fields=[0.4, -0.3], beta=1.7)
        r = bethe_min(m, [0.2, 0.6], rng=np.random.default_rng(0))
        assert pairwise_error(brute_force_solve(m), m, r.q_star) < 1e-6

    def test_high_temperature(self, rng):
        m = random_model(rng, n=8, p=0.8, beta=1e-4)
        ex = brute_force_solve(m)
        r = bethe_min(m, rng.uniform(0, 1, 8), rng=rng)
        assert partition_error(ex, r.f_value, m.beta) < 1e-4

    def test_ferromagnetic_bound(self, rng):
        m = random_model(rng, n=8, p=0.7, j_range=(0, 1), beta=1.0)
        fleet = multi_restart_minimize(m, 10, seed=0)
        assert signed_log_z_gap(brute_force_solve(m), fleet.best.f_value, m.beta) <= 1e-9


class TestRestartErrors:
    def _fake(self, q, f, conv):
        return MinimizationResult(np.asarray(q, float), f, 0.0, 1, conv)

    def test_excludes_unconverged(self):
        m = Model.from_edges(2, [(0, 1, 0.5)])
        ex = brute_force_solve(m)
        runs = [self._fake([0.5, 0.5], -1.0, True), self._fake([0.9, 0.1], -5.0, False), self._fake([0.6, 0.6], -0.9, True)]
        fleet = RestartResult(runs, [[0], [2]], 0)
        errs = restart_errors(ex, m, fleet)
        assert errs.excluded == 1
        assert errs.best == error_record(ex, m, runs[0])
        e0, e2 = error_record(ex, m, runs[0]), error_record(ex, m, runs[2])
        assert errs.averaged.singleton_error == pytest.approx((e0.singleton_error + e2.singleton_error) / 2)

    def test_none_converged(self):
        m = Model.from_edges(2, [(0, 1, 0.5)])
        fleet = RestartResult([self._fake([0.5, 0.5], 0.0, False)], [[0]], 0)
        errs = restart_errors(brute_force_solve(m), m, fleet)
        assert errs.excluded == 1 and np.isnan(errs.best.singleton_error)

    def test_record_dict(self):
        assert ErrorRecord(1.0, 2.0, 3.0).to_dict() == {
            "partition_error": 1.0,
            "singleton_error": 2.0,
            "pairwise_error": 3.0,
        }
        assert_allclose(list(ErrorRecord(1.0, 2.0, 3.0).to_dict().values()), [1, 2, 3])
