import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from django.test import SimpleTestCase
from scipy.sparse.linalg import norm as sparse_norm

from linalg.exceptions import DimensionMismatch, MatrixMarketError, SingularMatrix
from linalg.matrix_market import read_matrix_market, write_matrix_market
from linalg.sparse import (
    as_csr,
    lu_factor,
    lu_solve,
    lu_solve_transpose,
    principal_submatrix,
    spmv,
    spmv_transpose,
    transpose,
)


def _assert_canonical(testcase, M):
    offsets = M.indptr
    testcase.assertEqual(len(offsets), M.shape[0] + 1)
    testcase.assertTrue(np.all(np.diff(offsets) >= 0))
    testcase.assertEqual(offsets[-1], len(M.data))
    for row in range(M.shape[0]):
        cols = M.indices[offsets[row]:offsets[row + 1]]
        testcase.assertTrue(np.all(np.diff(cols) > 0))
        testcase.assertTrue(np.all((cols >= 0) & (cols < M.shape[1])))


class SpmvTests(SimpleTestCase):
    def test_identity(self):
        np.testing.assert_array_equal(spmv(as_csr(sp.identity(3)), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])

    def test_zero_matrix(self):
        np.testing.assert_array_equal(spmv(as_csr(sp.csr_matrix((3, 3))), [4.0, -1.0, 2.0]), np.zeros(3))

    def test_hand_example(self):
        M = as_csr([[2.0, 1.0], [0.0, 3.0]])
        np.testing.assert_array_equal(spmv(M, [1.0, 1.0]), [3.0, 3.0])
        np.testing.assert_array_equal(spmv_transpose(M, [1.0, 1.0]), [2.0, 4.0])

    def test_transpose_of_identity(self):
        v = np.array([0.5, -2.0, 7.0])
        np.testing.assert_array_equal(spmv_transpose(as_csr(sp.identity(3)), v), v)

    def test_dimension_mismatch(self):
        M = as_csr([[2.0, 1.0], [0.0, 3.0]])
        with self.assertRaises(DimensionMismatch):
            spmv(M, [1.0, 2.0, 3.0])
        with self.assertRaises(DimensionMismatch):
            spmv_transpose(as_csr(np.ones((2, 3))), [1.0, 2.0, 3.0])

    def test_adjoint_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            M = as_csr(rng.standard_normal((5, 5)))
            v, w = rng.standard_normal(5), rng.standard_normal(5)
            lhs = v @ spmv(M, w)
            rhs = w @ spmv_transpose(M, v)
            scale = sparse_norm(M) * np.linalg.norm(v) * np.linalg.norm(w)
            self.assertLessEqual(abs(lhs - rhs), 1e-13 * scale)

    def test_transpose_agrees_with_explicit_transpose(self):
        rng = np.random.default_rng(3)
        M = as_csr(sp.random(40, 30, density=0.2, random_state=11))
        v = rng.standard_normal(40)
        a = spmv_transpose(M, v)
        b = spmv(transpose(M), v)
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14 * np.linalg.norm(a))

    def test_canonical_structure(self):
        rows = np.array([0, 0, 1, 2, 2])
        cols = np.array([2, 0, 1, 0, 0])
        vals = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        M = as_csr(sp.coo_matrix((vals, (rows, cols)), shape=(3, 3)))
        _assert_canonical(self, M)
        self.assertEqual(M[2, 0], 9.0)
        _assert_canonical(self, transpose(M))
        _assert_canonical(self, principal_submatrix(M, [0, 2]))


class LuTests(SimpleTestCase):
    def test_identity_solves(self):
        F = lu_factor(sp.identity(4))
        b = np.array([1.0, -2.0, 3.0, 0.25])
        np.testing.assert_array_equal(lu_solve(F, b), b)
        np.testing.assert_array_equal(lu_solve_transpose(F, b), b)

    def test_hand_example(self):
        F = lu_factor([[2.0, 1.0], [0.0, 3.0]])
        np.testing.assert_allclose(lu_solve(F, [3.0, 3.0]), [1.0, 1.0], rtol=1e-15)

    def test_zero_one_by_one_is_singular(self):
        with self.assertRaises(SingularMatrix) as ctx:
            lu_factor(sp.csr_matrix((1, 1)))
        self.assertEqual(ctx.exception.pivot_row, 0)
        self.assertIn("pivot row 0", str(ctx.exception))

    def test_numerically_singular_names_a_pivot(self):
        with self.assertRaises(SingularMatrix) as ctx:
            lu_factor([[1.0, 1.0], [1.0, 1.0]])
        self.assertIsNotNone(ctx.exception.pivot_row)

    def test_non_square_rejected(self):
        with self.assertRaises(DimensionMismatch):
            lu_factor(np.ones((2, 3)))

    def test_spd_tridiagonal_solve_equals_transpose_solve(self):
        T = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(4, 4))
        F = lu_factor(T)
        b = np.array([1.0, 0.0, 2.0, -1.0])
        np.testing.assert_allclose(lu_solve(F, b), lu_solve_transpose(F, b), rtol=1e-14)

    def test_random_nonsymmetric_against_dense_elimination(self):
        rng = np.random.default_rng(42)
        M = rng.standard_normal((6, 6)) + 6.0 * np.eye(6)
        b = rng.standard_normal(6)
        F = lu_factor(M)
        np.testing.assert_allclose(lu_solve(F, b), np.linalg.solve(M, b), rtol=1e-12)
        np.testing.assert_allclose(lu_solve_transpose(F, b), np.linalg.solve(M.T, b), rtol=1e-12)

    def test_residuals_on_large_sparse_matrix(self):
        n = 5000
        rng = np.random.default_rng(1)
        M = sp.diags(
            [rng.uniform(-1, 1, n - 7), rng.uniform(-1, 1, n - 1), 4.0 + rng.uniform(0, 1, n),
             rng.uniform(-1, 1, n - 1), rng.uniform(-1, 1, n - 5)],
            [-7, -1, 0, 1, 5],
            format="csr",
        )
        F = lu_factor(M)
        b = rng.standard_normal(n)
        x = lu_solve(F, b)
        self.assertLessEqual(np.linalg.norm(spmv(M, x) - b) / np.linalg.norm(b), 1e-12)
        y = lu_solve_transpose(F, b)
        self.assertLessEqual(np.linalg.norm(spmv_transpose(M, y) - b) / np.linalg.norm(b), 1e-12)
        z = lu_solve(F, spmv(M, b))
        self.assertLessEqual(np.linalg.norm(z - b) / np.linalg.norm(b), 1e-11)

    def test_dimension_mismatch(self):
        F = lu_factor(sp.identity(3))
        with self.assertRaises(DimensionMismatch):
            lu_solve(F, np.ones(4))


class MatrixMarketTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_identity_round_trip(self):
        path = write_matrix_market(sp.identity(3), self.tmp / "eye.mtx")
        self.assertTrue(path.read_text().startswith("%%MatrixMarket matrix coordinate real general"))
        M = read_matrix_market(path)
        self.assertEqual((M != as_csr(sp.identity(3))).nnz, 0)

    def test_duplicates_are_summed(self):
        path = self.tmp / "dup.mtx"
        path.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "2 2 3\n"
            "1 1 1.5\n"
            "1 1 2.5\n"
            "2 2 1.0\n"
        )
        M = read_matrix_market(path)
        self.assertEqual(M[0, 0], 4.0)
        self.assertEqual(M.nnz, 2)

    def test_malformed_header(self):
        path = self.tmp / "bad.mtx"
        path.write_text("%%MatrixMarket matrix banana real general\n2 2 1\n1 1 1.0\n")
        with self.assertRaises(MatrixMarketError):
            read_matrix_market(path)

    def test_inconsistent_entry_count(self):
        path = self.tmp / "short.mtx"
        path.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "3 3 3\n"
            "1 1 1.0\n"
            "2 2 1.0\n"
        )
        with self.assertRaises(MatrixMarketError):
            read_matrix_market(path)

    def test_assembled_operator_round_trips_bit_identically(self):
        from discretization.dg import DgSpace, assemble_iipg
        from discretization.mesh import build_structured

        mesh, skeleton = build_structured(3)
        A = assemble_iipg(DgSpace(mesh, skeleton), eta=5.0)
        B = read_matrix_market(write_matrix_market(A, self.tmp / "A_h.mtx"))
        self.assertEqual(B.shape, A.shape)
        np.testing.assert_array_equal(B.indptr, A.indptr)
        np.testing.assert_array_equal(B.indices, A.indices)
        np.testing.assert_array_equal(B.data, A.data)
