import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp
from django.test import SimpleTestCase

from discretization.dg import DgSpace, assemble_iipg, assemble_sym, interpolate
from linalg.exceptions import SingularMatrix
from schwarz.coarse import build_coarse_operator
from schwarz.partition import SUMMARY_COLUMNS, build_partition, grid_shape, partition_summary
from schwarz.preconditioner import build_B0, build_preconditioner

SLOW_TESTS = bool(os.environ.get("SCHWARZLAB_SLOW_TESTS"))


def _problem(level, eta=5.0, eta0=5.0):
    space = DgSpace.structured(level)
    return space, assemble_iipg(space, eta), assemble_sym(space, eta0)


class PartitionTests(SimpleTestCase):
    def test_grid_shape(self):
        self.assertEqual(grid_shape(1), (1, 1))
        self.assertEqual(grid_shape(8), (2, 4))
        self.assertEqual(grid_shape(16), (4, 4))
        self.assertEqual(grid_shape(128), (8, 16))
        with self.assertRaises(ValueError):
            grid_shape(0)

    def test_single_subdomain_owns_everything(self):
        space = DgSpace.structured(3)
        partition = build_partition(space.mesh, 1)
        np.testing.assert_array_equal(partition.element_lists[0], np.arange(space.n_elements))
        np.testing.assert_array_equal(partition.dof_lists[0], np.arange(space.total_dofs))

    def test_four_subdomains_on_level_four(self):
        space = DgSpace.structured(4)
        h = space.mesh.h
        partition = build_partition(space.mesh, 4)
        for k in range(4):
            x0, x1, y0, y1 = partition.extended(k)
            self.assertEqual(x1 - x0, 0.5 + h)
            self.assertEqual(y1 - y0, 0.5 + h)
            self.assertEqual(partition.element_lists[k].size, 162)
        # neighbours share a strip two squares wide and nine squares long
        shared = np.intersect1d(partition.element_lists[0], partition.element_lists[1])
        self.assertEqual(shared.size, 36)
        diagonal = np.intersect1d(partition.element_lists[0], partition.element_lists[3])
        self.assertEqual(diagonal.size, 8)

    def test_elements_lie_in_extended_rectangles(self):
        space = DgSpace.structured(4)
        partition = build_partition(space.mesh, 16)
        for k in range(partition.ns):
            x0, x1, y0, y1 = partition.extended(k)
            corners = space.mesh.corners[partition.element_lists[k]]
            self.assertTrue(np.all((corners[..., 0] >= x0) & (corners[..., 0] <= x1)))
            self.assertTrue(np.all((corners[..., 1] >= y0) & (corners[..., 1] <= y1)))

    def test_every_dof_is_covered(self):
        space = DgSpace.structured(4)
        partition = build_partition(space.mesh, 8)
        self.assertTrue(np.all(partition.multiplicity(space.total_dofs) >= 1))

    def test_indivisible_grid(self):
        space = DgSpace.structured(4)
        with self.assertRaises(ValueError):
            build_partition(space.mesh, 3)

    def test_summary_csv(self):
        space = DgSpace.structured(3)
        partition = build_partition(space.mesh, 4)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "partition.csv"
            df = partition_summary(partition, path)
            loaded = pd.read_csv(path)
        self.assertEqual(list(df.columns), SUMMARY_COLUMNS)
        self.assertEqual(list(loaded.columns), SUMMARY_COLUMNS)
        self.assertEqual(len(loaded), 4)
        self.assertEqual(loaded["dofs"].tolist(), [3 * m for m in loaded["elements"]])


class CoarseOperatorTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.space = DgSpace.structured(4)
        cls.coarse = build_coarse_operator(cls.space, 2, eta=5.0, eta0=5.0)

    def test_coarse_operator_uses_scaled_penalty(self):
        coarse_space = DgSpace.structured(2)
        self.assertEqual((self.coarse.A_H != assemble_iipg(coarse_space, 20.0)).nnz, 0)
        self.assertEqual((self.coarse.A_H0 != assemble_sym(coarse_space, 20.0)).nnz, 0)

    def test_prolongation_of_linear_function(self):
        def linear(x, y):
            return 0.5 - x + 2.0 * y

        fine = interpolate(self.space, linear)
        coarse = interpolate(self.coarse.space, linear)
        np.testing.assert_allclose(self.coarse.P @ coarse, fine, atol=1e-14)

    def test_prolongation_reproduces_coarse_functions(self):
        rng = np.random.default_rng(5)
        c = rng.standard_normal(self.coarse.n)
        fine_values = (self.coarse.P @ c).reshape(-1, 3)
        parent = self.coarse.nesting.parent
        centers = self.space.mesh.barycenters[:, None, :]
        at_centers = np.einsum(
            "eqi,ei->e",
            self.coarse.space.basis_values(parent, centers),
            c.reshape(-1, 3)[parent],
        )
        np.testing.assert_allclose(fine_values.mean(axis=1), at_centers, atol=1e-13)

    def test_coarse_level_must_be_coarser(self):
        with self.assertRaises(ValueError):
            build_coarse_operator(self.space, 4)
        with self.assertRaises(ValueError):
            build_coarse_operator(self.space, 5)

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            build_coarse_operator(self.space, 2, mode="multigrid")

    def test_iterative_solves_match_direct(self):
        rng = np.random.default_rng(2)
        b = rng.standard_normal(self.coarse.n)
        exact = self.coarse.solve(b)
        exact_t = self.coarse.solve_transpose(b)
        for inner in ("symmetric", "none"):
            iterative = build_coarse_operator(
                self.space, 2, mode="iterative", rel_tol=1e-10, inner_preconditioner=inner
            )
            np.testing.assert_allclose(iterative.solve(b), exact, rtol=0, atol=1e-6 * np.linalg.norm(exact))
            np.testing.assert_allclose(
                iterative.solve_transpose(b), exact_t, rtol=0, atol=1e-6 * np.linalg.norm(exact_t)
            )
        np.testing.assert_array_equal(iterative.solve(np.zeros(self.coarse.n)), np.zeros(self.coarse.n))


class PreconditionerTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.space, cls.A, cls.A0 = _problem(3)
        cls.partition = build_partition(cls.space.mesh, 4)
        cls.coarse = build_coarse_operator(cls.space, 1)
        cls.B = build_preconditioner(cls.A, cls.A0, cls.partition, cls.coarse)
        cls.rng = np.random.default_rng(17)

    def test_local_matrices_are_principal_submatrices(self):
        dofs = self.partition.dof_lists[2]
        local = self.A[dofs, :][:, dofs].toarray()
        x = self.rng.standard_normal(dofs.size)
        np.testing.assert_allclose(local @ self.B.factors[2].lu.solve(x), x, atol=1e-10)

    def test_zero_residual(self):
        zero = np.zeros(self.space.total_dofs)
        np.testing.assert_array_equal(self.B.apply(zero), zero)
        np.testing.assert_array_equal(self.B.apply_transpose(zero), zero)
        np.testing.assert_array_equal(self.B.apply_z(zero), zero)

    def test_single_subdomain_without_coarse_is_exact_inverse(self):
        B = build_preconditioner(self.A, self.A0, build_partition(self.space.mesh, 1), coarse=None)
        r = self.rng.standard_normal(self.space.total_dofs)
        exact = np.linalg.solve(self.A.toarray(), r)
        np.testing.assert_allclose(B.apply(r), exact, rtol=0, atol=1e-11 * np.linalg.norm(exact))

    def test_linearity(self):
        r, s = self.rng.standard_normal((2, self.space.total_dofs))
        lhs = self.B.apply(2.5 * r - 0.75 * s)
        rhs = 2.5 * self.B.apply(r) - 0.75 * self.B.apply(s)
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * np.linalg.norm(rhs))

    def test_adjoint_identity(self):
        for _ in range(10):
            v, w = self.rng.standard_normal((2, self.space.total_dofs))
            Bv = self.B.apply(v)
            lhs = w @ Bv
            rhs = v @ self.B.apply_transpose(w)
            self.assertLessEqual(abs(lhs - rhs), 1e-11 * np.linalg.norm(w) * np.linalg.norm(Bv))

    def test_symmetric_operator_gives_symmetric_preconditioner(self):
        B = build_preconditioner(self.A0, self.A0, self.partition, self.coarse.symmetric())
        r = self.rng.standard_normal(self.space.total_dofs)
        a, b = B.apply(r), B.apply_transpose(r)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * np.linalg.norm(a))

    def test_z_is_symmetric_and_positive(self):
        for _ in range(100):
            v, w = self.rng.standard_normal((2, self.space.total_dofs))
            Zv = self.B.apply_z(v)
            lhs = w @ Zv
            rhs = v @ self.B.apply_z(w)
            self.assertLessEqual(abs(lhs - rhs), 1e-10 * np.linalg.norm(w) * np.linalg.norm(Zv))
            self.assertGreater(v @ self.B.apply_z(v), 0.0)

    def test_z_tail_reuses_forward_application(self):
        r = self.rng.standard_normal(self.space.total_dofs)
        np.testing.assert_array_equal(self.B.apply_z_tail(self.B.apply(r)), self.B.apply_z(r))

    def test_z_needs_symmetric_form(self):
        B = build_preconditioner(self.A, None, self.partition, self.coarse)
        with self.assertRaises(ValueError):
            B.apply_z(np.ones(self.space.total_dofs))

    def test_dense_columns_match_transpose(self):
        space, A, A0 = _problem(2)
        B = build_preconditioner(A, A0, build_partition(space.mesh, 4), build_coarse_operator(space, 1))
        n = space.total_dofs
        eye = np.eye(n)
        Binv = np.column_stack([B.apply(eye[:, j]) for j in range(n)])
        for j in range(5):
            np.testing.assert_allclose(B.apply_transpose(eye[:, j]), Binv[j, :], rtol=0, atol=1e-12)

    def test_thread_count_does_not_change_results(self):
        B4 = build_preconditioner(self.A, self.A0, self.partition, self.coarse, threads=4)
        r = self.rng.standard_normal(self.space.total_dofs)
        np.testing.assert_array_equal(B4.apply(r), self.B.apply(r))
        np.testing.assert_array_equal(B4.apply_z(r), self.B.apply_z(r))

    def test_singular_local_matrix_names_subdomain(self):
        n = self.space.total_dofs
        diag = np.ones(n)
        diag[5] = 0.0
        with self.assertRaises(SingularMatrix) as ctx:
            build_preconditioner(sp.diags(diag, format="csr"), None, self.partition)
        self.assertEqual(ctx.exception.subdomain, 0)
        self.assertIn("Subdomain 0", str(ctx.exception))

    def test_linear_operator_wrapper(self):
        r = self.rng.standard_normal(self.space.total_dofs)
        np.testing.assert_array_equal(self.B.as_operator("bt").matvec(r), self.B.apply_transpose(r))
        with self.assertRaises(ValueError):
            self.B.as_operator("q")


class SymmetricSchwarzTests(SimpleTestCase):
    def test_b0_is_symmetric(self):
        space, _, A0 = _problem(3)
        partition = build_partition(space.mesh, 4)
        B0 = build_B0(A0, partition, build_coarse_operator(space, 1))
        r = np.random.default_rng(3).standard_normal(space.total_dofs)
        a, b = B0.apply(r), B0.apply_transpose(r)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * np.linalg.norm(a))

    def test_b0_single_subdomain_is_inverse_of_a0(self):
        space, _, A0 = _problem(2)
        B0 = build_B0(A0, build_partition(space.mesh, 1), None)
        r = np.random.default_rng(4).standard_normal(space.total_dofs)
        exact = np.linalg.solve(A0.toarray(), r)
        np.testing.assert_allclose(B0.apply(r), exact, rtol=0, atol=1e-11 * np.linalg.norm(exact))


@unittest.skipUnless(SLOW_TESTS, "set SCHWARZLAB_SLOW_TESTS=1 to build the fine-mesh preconditioners")
class FineMeshBuildTests(SimpleTestCase):
    def test_builds_for_every_subdomain_count(self):
        space, A, A0 = _problem(7)
        coarse = build_coarse_operator(space, 5)
        for ns in (4, 8, 16, 32, 64, 128):
            B = build_preconditioner(A, A0, build_partition(space.mesh, ns), coarse, threads=4)
            self.assertEqual(len(B.factors), ns)
