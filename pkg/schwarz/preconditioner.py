"""
Two-level additive Schwarz preconditioner

    B⁻¹ = P A_H⁻¹ Pᵀ + Σ_k I_k A_k⁻¹ I_kᵀ,   A_k = I_kᵀ A I_k,

together with its transpose and the symmetric positive definite
Z⁻¹ = B⁻ᵀ A₀ B⁻¹.
"""
import logging

import numpy as np
import scipy.sparse.linalg as spla
from joblib import Parallel, delayed

from linalg.exceptions import DimensionMismatch, SingularMatrix
from linalg.sparse import (
    as_csr,
    as_vector,
    lu_factor,
    lu_solve,
    lu_solve_transpose,
    principal_submatrix,
    spmv,
)

logger = logging.getLogger(__name__)


def _factor_subdomain(k, A, dofs):
    try:
        return lu_factor(principal_submatrix(A, dofs))
    except SingularMatrix as exc:
        raise SingularMatrix(pivot_row=exc.pivot_row, subdomain=k, detail=exc.detail) from exc


class SchwarzPreconditioner:
    """
    Additive Schwarz preconditioner of ``A``.

    ``coarse`` may be None, in which case only the subdomain solves are
    summed. ``A0`` is only needed for the Z applications.
    """

    def __init__(self, A, partition, factors, coarse=None, A0=None, threads=1):
        self.A = A
        self.A0 = A0
        self.partition = partition
        self.factors = factors
        self.coarse = coarse
        self.threads = threads

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def shape(self):
        return (self.n, self.n)

    def _local_solves(self, r, transpose):
        solve = lu_solve_transpose if transpose else lu_solve
        dof_lists = self.partition.dof_lists
        if self.threads > 1:
            parts = Parallel(n_jobs=self.threads, prefer="threads")(
                delayed(solve)(F, r[dofs]) for F, dofs in zip(self.factors, dof_lists)
            )
        else:
            parts = [solve(F, r[dofs]) for F, dofs in zip(self.factors, dof_lists)]
        return parts

    def _apply(self, r, transpose):
        r = as_vector(r, self.n, "residual")
        out = np.zeros(self.n)
        if self.coarse is not None:
            rc = self.coarse.P.T @ r
            xc = self.coarse.solve_transpose(rc) if transpose else self.coarse.solve(rc)
            out += self.coarse.P @ xc
        # summed in subdomain order regardless of the thread count
        for dofs, part in zip(self.partition.dof_lists, self._local_solves(r, transpose)):
            out[dofs] += part
        return out

    def apply(self, r):
        """B⁻¹ r"""
        return self._apply(r, transpose=False)

    def apply_transpose(self, r):
        """B⁻ᵀ r"""
        return self._apply(r, transpose=True)

    def apply_z_tail(self, f):
        """B⁻ᵀ A₀ f, for callers that already hold f = B⁻¹ r."""
        if self.A0 is None:
            raise ValueError("Z applications need the symmetric form A0 attached to the preconditioner")
        return self.apply_transpose(spmv(self.A0, f))

    def apply_z(self, r):
        """Z⁻¹ r = B⁻ᵀ A₀ B⁻¹ r"""
        return self.apply_z_tail(self.apply(r))

    def as_operator(self, which="b"):
        """scipy LinearOperator for one of the actions b, bt or z."""
        actions = {"b": self.apply, "bt": self.apply_transpose, "z": self.apply_z}
        if which not in actions:
            raise ValueError(f"Unknown preconditioner action '{which}', expected one of {sorted(actions)}")
        return spla.LinearOperator(self.shape, matvec=actions[which], dtype=np.float64)


def build_preconditioner(A, A0, partition, coarse=None, threads=1):
    """
    Factor every local matrix A_k and attach the coarse operator.

    Raises SingularMatrix naming the subdomain when a local matrix cannot be
    factored.
    """
    A = as_csr(A)
    if A0 is not None:
        A0 = as_csr(A0)
        if A0.shape != A.shape:
            raise DimensionMismatch(f"A0 has shape {A0.shape}, A has shape {A.shape}")
    if coarse is not None and coarse.P.shape[0] != A.shape[0]:
        raise DimensionMismatch(
            f"Coarse prolongation maps to {coarse.P.shape[0]} dofs, the operator has {A.shape[0]}"
        )

    factors = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_factor_subdomain)(k, A, dofs) for k, dofs in enumerate(partition.dof_lists)
    )
    local_nnz = sum(F.nnz for F in factors)
    logger.info(
        f"Schwarz preconditioner: {partition.ns} subdomains, n={A.shape[0]}, "
        f"local LU nnz={local_nnz}, coarse={'none' if coarse is None else coarse.mode}"
    )
    return SchwarzPreconditioner(A, partition, factors, coarse=coarse, A0=A0, threads=threads)


def build_B0(A0, partition, coarse, threads=1):
    """
    Additive Schwarz built from A₀ alone: local matrices of A₀ and the coarse
    symmetric form (penalty η₀·H/h), all solved exactly.
    """
    symmetric_coarse = coarse.symmetric() if coarse is not None else None
    return build_preconditioner(A0, A0, partition, coarse=symmetric_coarse, threads=threads)
