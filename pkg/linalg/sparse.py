"""
Sparse and small-dense kernels shared by the discretization, the Schwarz
preconditioners and the Krylov solvers.

Matrices are ``scipy.sparse.csr_matrix`` instances in canonical form (sorted
column indices, no duplicates); vectors are 1-D float64 numpy arrays.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from linalg.exceptions import DimensionMismatch, NonFiniteResult, SingularMatrix

logger = logging.getLogger(__name__)

# Above this size a failed sparse factorization is not re-run densely just to
# locate the zero pivot.
DENSE_PIVOT_SEARCH_LIMIT = 2000


def as_csr(M):
    """
    Return ``M`` as a canonical float64 CSR matrix.

    Duplicate (row, col) pairs are summed and column indices are sorted
    within each row, so the structural invariants hold for every matrix that
    leaves this module.
    """
    if sp.issparse(M):
        out = sp.csr_matrix(M, dtype=np.float64, copy=True)
    else:
        out = sp.csr_matrix(np.atleast_2d(np.asarray(M, dtype=np.float64)))
    out.sum_duplicates()
    out.sort_indices()
    return out


def as_vector(v, n=None, name="vector"):
    """Validate ``v`` as a 1-D float vector (of length ``n`` when given)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise DimensionMismatch(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NonFiniteResult(f"{what} produced non-finite entries")
    return x


def spmv(M, v):
    """M·v with the row-major accumulation order of the CSR kernel."""
    nrows, ncols = M.shape
    v = as_vector(v, ncols, "spmv operand")
    return _check_finite(M @ v, "spmv")


def spmv_transpose(M, v):
    """Mᵀ·v without forming the transpose explicitly."""
    nrows, ncols = M.shape
    v = as_vector(v, nrows, "spmv_transpose operand")
    return _check_finite(M.T @ v, "spmv_transpose")


def transpose(M):
    return as_csr(M.T)


def principal_submatrix(M, index):
    """Rows and columns ``index`` of ``M`` (the local matrix Iᵀ M I)."""
    index = np.asarray(index, dtype=np.int64)
    return as_csr(M[index, :][:, index])


@dataclass(frozen=True)
class LuFactors:
    """
    Sparse LU factorization with row and column permutations.

    Wraps SuperLU; the same factors serve both M x = b and Mᵀ x = b.
    """
    n: int
    lu: spla.SuperLU

    @property
    def nnz(self):
        return self.lu.L.nnz + self.lu.U.nnz


def _structural_zero(M):
    """Index of an all-zero row (or column) or None."""
    magnitude = abs(M)
    rows = np.flatnonzero(np.asarray(magnitude.max(axis=1).todense()).ravel() == 0)
    if rows.size:
        return int(rows[0])
    cols = np.flatnonzero(np.asarray(magnitude.max(axis=0).todense()).ravel() == 0)
    if cols.size:
        return int(cols[0])
    return None


def _locate_dense_pivot(M):
    if M.shape[0] > DENSE_PIVOT_SEARCH_LIMIT:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, _ = scipy.linalg.lu_factor(M.toarray(), check_finite=False)
    zeros = np.flatnonzero(np.diag(lu) == 0.0)
    return int(zeros[0]) if zeros.size else None


def lu_factor(M):
    """
    Factor a square sparse matrix with partial pivoting.

    Raises SingularMatrix naming the pivot row when a zero pivot is found.
    """
    M = as_csr(M)
    nrows, ncols = M.shape
    if nrows != ncols:
        raise DimensionMismatch(f"lu_factor needs a square matrix, got {nrows}x{ncols}")

    zero_line = _structural_zero(M)
    if zero_line is not None:
        raise SingularMatrix(pivot_row=zero_line, detail="structurally zero row or column")

    try:
        lu = spla.splu(M.tocsc(), permc_spec="COLAMD", diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        raise SingularMatrix(pivot_row=_locate_dense_pivot(M), detail=str(exc)) from exc

    logger.debug(f"LU factorization of {nrows}x{nrows} matrix: nnz(A)={M.nnz}, nnz(L+U)={lu.L.nnz + lu.U.nnz}")
    return LuFactors(n=nrows, lu=lu)


def lu_solve(F, b):
    b = as_vector(b, F.n, "right-hand side")
    return _check_finite(F.lu.solve(b), "lu_solve")


def lu_solve_transpose(F, b):
    b = as_vector(b, F.n, "right-hand side")
    return _check_finite(F.lu.solve(b, trans="T"), "lu_solve_transpose")
