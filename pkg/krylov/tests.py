import json

import numpy as np
import scipy.sparse as sp
from django.test import SimpleTestCase

from discretization.dg import DgSpace, assemble_iipg, assemble_rhs, assemble_sym
from krylov.gmres import (
    GmresConfig,
    SolveReport,
    gmres_right,
    gmres_two_prec,
    residual_rate,
    solve_gram,
)
from krylov.serializers import render_report
from schwarz.coarse import build_coarse_operator
from schwarz.partition import build_partition
from schwarz.preconditioner import build_preconditioner


def _convection_matrix(n=60, wind=0.4):
    """Small nonsymmetric positive definite test matrix."""
    return sp.diags([-1.0 - wind, 2.5, -1.0 + wind], [-1, 0, 1], shape=(n, n), format="csr")


def _level3_setup():
    space = DgSpace.structured(3)
    A = assemble_iipg(space, 5.0)
    A0 = assemble_sym(space, 5.0)
    B = build_preconditioner(A, A0, build_partition(space.mesh, 4), build_coarse_operator(space, 1))
    return A, B, assemble_rhs(space)


class GmresConfigTests(SimpleTestCase):
    def test_validation(self):
        for kwargs in ({"rel_tol": 0.0}, {"rel_tol": 1.0}, {"restart": 0}, {"max_iter": 0}):
            with self.assertRaises(ValueError):
                GmresConfig(**kwargs)

    def test_echo(self):
        echo = GmresConfig(restart=10, weight=lambda v: v).echo()
        self.assertEqual(echo, {"rel_tol": 1e-6, "restart": 10, "max_iter": 500, "residual_norm": "weighted"})


class ResidualRateTests(SimpleTestCase):
    def test_last_ratio(self):
        self.assertEqual(residual_rate(SolveReport(residual_history=[1.0, 0.5])), 0.5)

    def test_needs_two_entries(self):
        with self.assertRaises(ValueError):
            residual_rate(SolveReport(residual_history=[1.0]))
        self.assertIsNone(SolveReport(residual_history=[1.0]).convergence_rate)


class GmresRightTests(SimpleTestCase):
    def test_identity(self):
        b = np.array([1.0, -2.0, 0.5, 4.0])
        x, report = gmres_right(sp.identity(4, format="csr"), None, b)
        self.assertEqual(report.iterations, 1)
        self.assertTrue(report.converged)
        np.testing.assert_allclose(x, b, rtol=1e-15)

    def test_zero_rhs(self):
        x, report = gmres_right(_convection_matrix(), None, np.zeros(60))
        self.assertEqual(report.iterations, 0)
        self.assertTrue(report.converged)
        np.testing.assert_array_equal(x, np.zeros(60))

    def test_history_is_monotone_without_restart(self):
        A = _convection_matrix()
        b = np.random.default_rng(0).standard_normal(60)
        x, report = gmres_right(A, None, b, cfg=GmresConfig(rel_tol=1e-10))
        self.assertTrue(report.converged)
        history = np.array(report.residual_history)
        self.assertTrue(np.all(np.diff(history) <= 1e-13 * history[0]))
        true = np.linalg.norm(b - A @ x)
        self.assertLessEqual(abs(true - history[-1]), 1e-8 * history[0])
        self.assertLessEqual(true, 1e-10 * history[0])

    def test_restarted_run_converges(self):
        A = _convection_matrix()
        b = np.ones(60)
        x, report = gmres_right(A, None, b, cfg=GmresConfig(rel_tol=1e-8, restart=5))
        self.assertTrue(report.converged)
        self.assertLessEqual(np.linalg.norm(b - A @ x), 1e-8 * np.linalg.norm(b))
        self.assertEqual(report.config["restart"], 5)

    def test_iteration_cap(self):
        _, report = gmres_right(_convection_matrix(), None, np.ones(60), cfg=GmresConfig(rel_tol=1e-12, max_iter=3))
        self.assertFalse(report.converged)
        self.assertEqual(report.iterations, 3)
        self.assertEqual(len(report.residual_history), 4)

    def test_varying_preconditioner(self):
        A = _convection_matrix()
        b = np.ones(60)
        calls = {"count": 0}

        def jittery_jacobi(v):
            calls["count"] += 1
            return v / (2.5 + 0.1 * (calls["count"] % 3))

        x, report = gmres_right(A, jittery_jacobi, b, cfg=GmresConfig(rel_tol=1e-9))
        self.assertTrue(report.converged)
        self.assertLessEqual(np.linalg.norm(b - A @ x), 1e-9 * np.linalg.norm(b))

    def test_history_can_be_reduced(self):
        _, report = gmres_right(_convection_matrix(), None, np.ones(60), cfg=GmresConfig(record_history=False))
        self.assertEqual(len(report.residual_history), 2)
        self.assertTrue(report.converged)

    def test_exact_preconditioner_converges_at_once(self):
        space = DgSpace.structured(3)
        A = assemble_iipg(space, 5.0)
        B = build_preconditioner(A, None, build_partition(space.mesh, 1), coarse=None)
        _, report = gmres_right(A, B, assemble_rhs(space))
        self.assertEqual(report.iterations, 1)
        self.assertTrue(report.converged)

    def test_schwarz_preconditioned_solve(self):
        A, B, b = _level3_setup()
        x, report = gmres_right(A, B.apply, b)
        self.assertTrue(report.converged)
        self.assertLessEqual(np.linalg.norm(b - A @ x), 1e-6 * np.linalg.norm(b))
        rate = report.convergence_rate
        self.assertTrue(0.0 < rate <= 1.0)

    def test_repeated_runs_are_identical(self):
        A, B, b = _level3_setup()
        _, first = gmres_right(A, B.apply_z, b)
        _, second = gmres_right(A, B.apply_z, b)
        self.assertEqual(first.iterations, second.iterations)
        self.assertEqual(first.residual_history, second.residual_history)


class GramSolveTests(SimpleTestCase):
    def test_orthonormal_directions(self):
        a1, a2, fallback = solve_gram(1.0, 0.0, 1.0, 0.3, -0.7)
        self.assertEqual((a1, a2, fallback), (0.3, -0.7, False))

    def test_dependent_directions_fall_back(self):
        a1, a2, fallback = solve_gram(1.0, 1.0, 1.0, 0.5, 0.5)
        self.assertTrue(fallback)
        self.assertEqual((a1, a2), (0.5, 0.0))

    def test_second_direction_preferred_when_better(self):
        a1, a2, fallback = solve_gram(4.0, 2.0, 1.0, 0.2, 0.4)
        self.assertTrue(fallback)
        self.assertEqual((a1, a2), (0.0, 0.4))

    def test_no_progress(self):
        self.assertEqual(solve_gram(0.0, 0.0, 0.0, 0.0, 0.0), (0.0, 0.0, True))


class TwoPrecTests(SimpleTestCase):
    def test_exact_preconditioners(self):
        A = _convection_matrix(20)
        dense_inverse = np.linalg.inv(A.toarray())
        b = np.random.default_rng(1).standard_normal(20)
        x, report = gmres_two_prec(A, dense_inverse, dense_inverse, b)
        self.assertEqual(report.iterations, 1)
        self.assertTrue(report.converged)
        np.testing.assert_allclose(A @ x, b, atol=1e-12 * np.linalg.norm(b))

    def test_zero_rhs(self):
        x, report = gmres_two_prec(_convection_matrix(), None, None, np.zeros(60))
        self.assertEqual(report.iterations, 0)
        np.testing.assert_array_equal(x, np.zeros(60))

    def test_directions_stay_orthonormal(self):
        A, B, b = _level3_setup()
        worst = []

        def check(state, report):
            G = state.gram()
            worst.append(np.abs(G - np.eye(len(state))).max())

        x, report = gmres_two_prec(A, B.apply, None, b, m2_from_m1=B.apply_z_tail, callback=check)
        self.assertTrue(report.converged)
        self.assertLessEqual(max(worst), 1e-8)
        self.assertLessEqual(np.linalg.norm(b - A @ x), 1e-6 * np.linalg.norm(b) * (1 + 1e-8))

    def test_per_iteration_domination(self):
        A, B, b = _level3_setup()
        _, report = gmres_two_prec(A, B.apply, B.apply_z, b)
        history = report.residual_history
        for m, entry in enumerate(report.coefficient_trace):
            self.assertLessEqual(history[m + 1], entry["single_direction_bound"] + 1e-12 * history[0])

    def test_reuse_matches_separate_applications(self):
        A, B, b = _level3_setup()
        _, separate = gmres_two_prec(A, B.apply, B.apply_z, b)
        _, reused = gmres_two_prec(A, B.apply, None, b, m2_from_m1=B.apply_z_tail)
        self.assertEqual(separate.iterations, reused.iterations)
        np.testing.assert_allclose(separate.residual_history, reused.residual_history, rtol=1e-10)

    def test_not_slower_than_z_alone(self):
        A, B, b = _level3_setup()
        _, z_only = gmres_right(A, B.apply_z, b)
        _, combined = gmres_two_prec(A, B.apply, B.apply_z, b)
        self.assertLessEqual(combined.iterations, z_only.iterations)

    def test_restart_window(self):
        A, B, b = _level3_setup()
        sizes = []
        _, report = gmres_two_prec(
            A, B.apply, B.apply_transpose, b, cfg=GmresConfig(restart=3),
            callback=lambda state, report: sizes.append(len(state)),
        )
        self.assertTrue(report.converged)
        self.assertLessEqual(max(sizes), 3)

    def test_weighted_norm(self):
        A, B, b = _level3_setup()
        cfg = GmresConfig(weight=B.apply_z)
        _, report = gmres_two_prec(A, B.apply, B.apply_z, b, cfg=cfg)
        self.assertAlmostEqual(report.residual_history[0], np.sqrt(b @ B.apply_z(b)), delta=1e-12 * report.residual_history[0])
        history = report.residual_history
        for m, entry in enumerate(report.coefficient_trace):
            self.assertLessEqual(history[m + 1], entry["single_direction_bound"] + 1e-12 * history[0])

    def test_report_serializes(self):
        A, B, b = _level3_setup()
        _, report = gmres_two_prec(A, B.apply, B.apply_transpose, b)
        data = json.loads(render_report(report))
        self.assertEqual(data["iterations"], report.iterations)
        self.assertEqual(len(data["residual_history"]), report.iterations + 1)
        self.assertEqual(set(data["coefficient_trace"][0]), {"alpha_1", "alpha_2", "sigma", "single_direction_bound", "fallback"})
        self.assertEqual(data["config"]["residual_norm"], "euclidean")
        self.assertAlmostEqual(data["rate"], report.convergence_rate)
