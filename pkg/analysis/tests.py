import json
import math

import numpy as np
from django.test import SimpleTestCase

from analysis.constants import (
    H0Constants,
    check_beta_bounds,
    check_estimate0,
    closed_form_bounds,
    congruence,
    densify,
    measure_chain,
    measure_h0,
    verify_double_inverse,
    verify_inverse_pair,
)
from analysis.serializers import ChainConstantsSerializer, EstimateReportSerializer, render
from discretization.dg import DgSpace, assemble_iipg, assemble_rhs, assemble_sym
from krylov.gmres import GmresConfig, gmres_right
from linalg.exceptions import NotPositiveDefinite, SizeLimitExceeded
from schwarz.coarse import build_coarse_operator
from schwarz.partition import build_partition
from schwarz.preconditioner import build_B0, build_preconditioner


def _spd(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    return X @ X.T + n * np.eye(n)


def _schwarz_setup(level, coarse_level=1, ns=4):
    space = DgSpace.structured(level)
    A = assemble_iipg(space, 5.0)
    A0 = assemble_sym(space, 5.0)
    partition = build_partition(space.mesh, ns)
    coarse = build_coarse_operator(space, coarse_level)
    B = build_preconditioner(A, A0, partition, coarse)
    B0 = build_B0(A0, partition, coarse)
    return space, A, A0, B, B0, coarse


class MeasureH0Tests(SimpleTestCase):
    def test_identical_pair(self):
        M0 = _spd(12, 0)
        c = measure_h0(M0, M0)
        self.assertAlmostEqual(c.c0, 1.0, places=10)
        self.assertAlmostEqual(c.c1, 1.0, places=10)

    def test_scaled_pair(self):
        M0 = _spd(12, 1)
        c = measure_h0(2.0 * M0, M0)
        self.assertAlmostEqual(c.c0, 2.0, places=10)
        self.assertAlmostEqual(c.c1, 2.0, places=10)

    def test_reference_scaling(self):
        rng = np.random.default_rng(2)
        M = _spd(10, 3) + rng.standard_normal((10, 10))
        M0 = _spd(10, 4)
        c = measure_h0(M, M0)
        scaled = measure_h0(M, 4.0 * M0)
        self.assertAlmostEqual(scaled.c0, c.c0 / 4.0, places=10)
        self.assertAlmostEqual(scaled.c1, c.c1 / 4.0, places=10)

    def test_congruence(self):
        M0 = _spd(8, 5)
        L = np.linalg.cholesky(M0)
        np.testing.assert_allclose(congruence(M0, L), np.eye(8), atol=1e-12)

    def test_scaling_covariance(self):
        rng = np.random.default_rng(6)
        M = _spd(10, 7) + rng.standard_normal((10, 10))
        M0 = _spd(10, 8)
        c = measure_h0(M, M0)
        for s in (0.1, 3.0):
            scaled = measure_h0(s * M, M0)
            self.assertAlmostEqual(scaled.c0, s * c.c0, delta=1e-10 * s * c.c0)
            self.assertAlmostEqual(scaled.c1, s * c.c1, delta=1e-10 * s * c.c1)

    def test_congruent_pair_has_same_constants(self):
        rng = np.random.default_rng(9)
        M = _spd(10, 10) + rng.standard_normal((10, 10))
        M0 = _spd(10, 11)
        L = np.linalg.cholesky(M0)
        c = measure_h0(M, M0)
        transformed = measure_h0(congruence(M, L), np.eye(10))
        self.assertAlmostEqual(transformed.c0, c.c0, delta=1e-9 * abs(c.c0))
        self.assertAlmostEqual(transformed.c1, c.c1, delta=1e-9 * c.c1)

    def test_rotation(self):
        M = np.array([[1.0, -0.5], [0.5, 1.0]])
        c = measure_h0(M, np.eye(2))
        self.assertAlmostEqual(c.c0, 1.0, places=14)
        self.assertAlmostEqual(c.c1, math.sqrt(1.25), places=14)

    def test_size_limit(self):
        with self.assertRaises(SizeLimitExceeded):
            measure_h0(np.eye(20), np.eye(20), n_limit=10)
        with self.assertRaises(SizeLimitExceeded):
            densify(lambda v: v, 20, n_limit=10)

    def test_reference_must_be_spd(self):
        with self.assertRaises(NotPositiveDefinite):
            measure_h0(np.eye(3), np.diag([1.0, -1.0, 1.0]))
        with self.assertRaises(NotPositiveDefinite):
            measure_h0(np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_densify_callable(self):
        M = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(densify(lambda v: M @ v, 3, threads=2), M)


class InversePairTests(SimpleTestCase):
    def test_rotation_inverse_is_tight(self):
        M = np.array([[1.0, -0.5], [0.5, 1.0]])
        c = measure_h0(M, np.eye(2))
        report = verify_inverse_pair(c, M, np.eye(2))
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.measured.c0, 1.0 / 1.25, places=12)
        self.assertAlmostEqual(report.lower_slack, 0.0, places=12)
        self.assertAlmostEqual(report.measured.c1, 1.0 / math.sqrt(1.25), places=12)

    def test_dg_pair(self):
        space = DgSpace.structured(3)
        A = assemble_iipg(space, 5.0)
        A0 = assemble_sym(space, 5.0)
        c = measure_h0(A, A0)
        self.assertGreater(c.c0, 0.0)
        self.assertGreaterEqual(c.c1, c.c0)
        self.assertTrue(verify_inverse_pair(c, A, A0).passed)

    def test_overstated_constants_fail(self):
        M = np.array([[1.0, -0.5], [0.5, 1.0]])
        report = verify_inverse_pair(H0Constants(c0=0.5, c1=0.6), M, np.eye(2))
        self.assertFalse(report.passed)

    def test_double_inverse(self):
        space = DgSpace.structured(2)
        report = verify_double_inverse(assemble_iipg(space, 5.0), assemble_sym(space, 5.0))
        self.assertTrue(report.passed)
        self.assertLessEqual(report.closure_lower, report.second.measured.c0 + 1e-8)


class ChainTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        space, A, A0, B, B0, coarse = _schwarz_setup(2)
        cls.A, cls.A0, cls.B = A, A0, B
        cls.chain = measure_chain(A, A0, B, B0, coarse_pair=(coarse.A_H, coarse.A_H0))

    def test_constants_are_positive(self):
        chain = self.chain
        for value in (chain.gamma0, chain.beta0, chain.alpha0):
            self.assertGreater(value, 0.0)
        self.assertLessEqual(chain.gamma0, chain.gamma1)
        self.assertLessEqual(chain.alpha0, chain.alpha1 + 1e-12)
        self.assertLess(chain.contraction, 1.0)
        self.assertGreater(chain.contraction, 0.0)

    def test_effective_constants_cover_coarse_pair(self):
        effective = self.chain.effective
        self.assertLessEqual(effective.c0, self.chain.fine.c0)
        self.assertLessEqual(effective.c0, self.chain.coarse.c0)
        self.assertGreaterEqual(effective.c1, self.chain.coarse.c1)

    def test_beta_bounds_hold(self):
        report = check_beta_bounds(self.chain)
        self.assertTrue(report.passed)
        self.assertEqual(
            set(report.bounds), {"beta0", "beta1", "alpha0", "alpha1_printed", "alpha1_derived"}
        )

    def test_exact_solve_reproduces_fine_constants(self):
        A = self.A.toarray()
        A0 = self.A0.toarray()
        A_inv = np.linalg.inv(A)
        chain = measure_chain(A, A0, A_inv, np.linalg.inv(A0), Z=A_inv.T @ A0 @ A_inv)
        self.assertAlmostEqual(chain.gamma0, 1.0, places=8)
        self.assertAlmostEqual(chain.gamma1, 1.0, places=8)
        self.assertAlmostEqual(chain.beta0, chain.fine.c0, delta=1e-8 * chain.fine.c1)
        self.assertAlmostEqual(chain.beta1, chain.fine.c1, delta=1e-8 * chain.fine.c1)

    def test_serializes(self):
        data = json.loads(render(ChainConstantsSerializer, self.chain))
        self.assertAlmostEqual(data["alpha0"], self.chain.alpha0)
        self.assertAlmostEqual(data["effective"]["c0"], self.chain.effective.c0)
        self.assertIsNotNone(data["coarse"])


class ClosedFormTests(SimpleTestCase):
    def test_identity_constants(self):
        bounds = closed_form_bounds(1.0, 1.0, 1.0, 1.0)
        for value in bounds.values():
            self.assertAlmostEqual(value, 1.0)

    def test_alpha1_candidates_differ(self):
        bounds = closed_form_bounds(0.5, 2.0, 0.3, 3.0)
        self.assertAlmostEqual(bounds["beta0"], 0.125 / 12.0)
        self.assertAlmostEqual(bounds["beta1"], 4.0 / 0.15)
        self.assertAlmostEqual(bounds["alpha0"], 0.25 * 0.3 / 4.0)
        self.assertAlmostEqual(bounds["alpha1_printed"], 4.0 / (0.125 * 3.0))
        self.assertAlmostEqual(bounds["alpha1_derived"], 8.0 * 3.0 / 0.125)


class EstimateTests(SimpleTestCase):
    def test_history_on_the_bound(self):
        base = 1.0 - math.sqrt(0.25)
        history = [2.0 * base ** (m / 2.0) for m in range(8)]
        report = check_estimate0(history, 0.25, 1.0)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.factor, math.sqrt(0.5))
        self.assertAlmostEqual(report.tightest_ratio, 1.0, places=12)

    def test_history_above_the_bound(self):
        base = 1.0 - math.sqrt(0.25)
        history = [2.0 * base ** (m / 2.0) for m in range(8)]
        history[3] *= 1.01
        report = check_estimate0(history, 0.25, 1.0)
        self.assertFalse(report.passed)
        self.assertEqual(report.violations, [3])
        self.assertEqual(report.tightest_step, 3)

    def test_collapsed_bound(self):
        report = check_estimate0([1.0, 0.5], 2.0, 1.0)
        self.assertFalse(report.passed)
        self.assertEqual(report.violations, [1])
        self.assertIsNone(json.loads(render(EstimateReportSerializer, report))["tightest_ratio"])

    def test_invalid_input(self):
        with self.assertRaises(ValueError):
            check_estimate0([], 0.1, 1.0)
        with self.assertRaises(ValueError):
            check_estimate0([1.0], 0.0, 1.0)

    def test_weighted_schwarz_residuals_respect_the_bound(self):
        space, A, A0, B, B0, coarse = _schwarz_setup(3)
        chain = measure_chain(A, A0, B, B0, coarse_pair=(coarse.A_H, coarse.A_H0))
        _, report = gmres_right(A, B.apply_z, assemble_rhs(space), cfg=GmresConfig(weight=B.apply_z))
        self.assertTrue(report.converged)
        estimate = check_estimate0(report.residual_history, chain.alpha0, chain.alpha1)
        self.assertTrue(estimate.passed)
        self.assertLessEqual(estimate.tightest_ratio, 1.0 + 1e-9)

        # an overstated alpha0 collapses the bound
        tampered = check_estimate0(report.residual_history, 2.0 * chain.alpha1, chain.alpha1)
        self.assertFalse(tampered.passed)
