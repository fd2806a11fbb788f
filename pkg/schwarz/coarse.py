"""
Coarse-grid correction of the two-level Schwarz preconditioners.

The coarse space is the DG space on a coarser level of the same nested mesh
family. P injects coarse functions into the fine space by evaluating every
coarse basis function at the three nodes of each fine element it contains.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from discretization.dg import DgSpace, PenaltyConfig, assemble_iipg, assemble_sym
from discretization.mesh import build_nesting, build_structured
from linalg.sparse import as_csr, as_vector, lu_factor, lu_solve, lu_solve_transpose

logger = logging.getLogger(__name__)

DIRECT = "direct"
ITERATIVE = "iterative"
SOLVER_MODES = (DIRECT, ITERATIVE)
INNER_PRECONDITIONERS = ("symmetric", "none")

PROLONGATION_DROP_TOL = 1e-13
INNER_MAX_CYCLES = 1000


def build_prolongation(fine_space, coarse_space, nesting):
    """Fine dofs × coarse dofs matrix of coarse basis values at fine nodes."""
    parent = nesting.parent
    fine_nodes = fine_space.mesh.corners                   # (n_fine, 3, 2)
    values = coarse_space.basis_values(parent, fine_nodes)  # (n_fine, 3 nodes, 3 coarse basis)
    rows = np.broadcast_to(fine_space.element_dofs[:, :, None], values.shape)
    cols = np.broadcast_to(coarse_space.element_dofs[parent][:, None, :], values.shape)
    keep = np.abs(values) >= PROLONGATION_DROP_TOL
    P = sp.coo_matrix(
        (values[keep], (rows[keep], cols[keep])),
        shape=(fine_space.total_dofs, coarse_space.total_dofs),
    )
    return as_csr(P)


@dataclass(frozen=True, eq=False)
class CoarseOperator:
    space: DgSpace
    nesting: object
    P: sp.csr_matrix
    A_H: sp.csr_matrix
    A_H0: sp.csr_matrix
    mode: str = DIRECT
    rel_tol: float = 1e-10
    restart: int = 20
    inner_preconditioner: str = "symmetric"

    def __post_init__(self):
        if self.mode not in SOLVER_MODES:
            raise ValueError(f"Unknown coarse solver mode '{self.mode}', expected one of {SOLVER_MODES}")
        if self.inner_preconditioner not in INNER_PRECONDITIONERS:
            raise ValueError(
                f"Unknown inner preconditioner '{self.inner_preconditioner}', "
                f"expected one of {INNER_PRECONDITIONERS}"
            )
        if not 0 < self.rel_tol < 1:
            raise ValueError(f"Coarse tolerance must lie in (0, 1), got {self.rel_tol}")

    @property
    def n(self):
        return self.A_H.shape[0]

    @cached_property
    def factors(self):
        return lu_factor(self.A_H)

    @cached_property
    def _symmetric_factors(self):
        return lu_factor(self.A_H0)

    def symmetric(self):
        """The same coarse space with A_H replaced by its symmetric form, solved exactly."""
        return CoarseOperator(
            space=self.space, nesting=self.nesting, P=self.P,
            A_H=self.A_H0, A_H0=self.A_H0, mode=DIRECT,
        )

    def prepare(self):
        if self.mode == DIRECT:
            self.factors
        elif self.inner_preconditioner == "symmetric":
            self._symmetric_factors
        return self

    def _inner_preconditioner(self):
        if self.inner_preconditioner == "none":
            return None
        F = self._symmetric_factors
        return spla.LinearOperator((self.n, self.n), matvec=lambda v: lu_solve(F, np.ravel(v)), dtype=np.float64)

    def _iterate(self, matrix, b):
        if not np.any(b):
            return np.zeros_like(b)
        x, info = spla.gmres(
            matrix, b, rtol=self.rel_tol, atol=0.0, restart=self.restart,
            maxiter=INNER_MAX_CYCLES, M=self._inner_preconditioner(),
        )
        if info > 0:
            logger.warning(f"Coarse GMRES stopped after {info} iterations without reaching rtol={self.rel_tol}")
        return x

    def solve(self, b):
        b = as_vector(b, self.n, "coarse right-hand side")
        if self.mode == DIRECT:
            return lu_solve(self.factors, b)
        return self._iterate(self.A_H, b)

    def solve_transpose(self, b):
        b = as_vector(b, self.n, "coarse right-hand side")
        if self.mode == DIRECT:
            return lu_solve_transpose(self.factors, b)
        return self._iterate(self.A_H.T.tocsr(), b)


def build_coarse_operator(fine_space, coarse_level, eta=5.0, eta0=5.0, mode=DIRECT, rel_tol=1e-10,
                          restart=20, inner_preconditioner="symmetric"):
    """
    Assemble the coarse problem for ``fine_space``. Both coarse penalties are
    scaled by H/h.
    """
    fine_level = fine_space.mesh.level
    if coarse_level >= fine_level:
        raise ValueError(f"Coarse level {coarse_level} must be coarser than the fine level {fine_level}")

    coarse_mesh, coarse_skeleton = build_structured(coarse_level)
    coarse_space = DgSpace(coarse_mesh, coarse_skeleton)
    nesting = build_nesting(fine_space.mesh, coarse_mesh)
    penalty = PenaltyConfig(eta=eta, eta0=eta0).coarse(fine_level, coarse_level)

    coarse = CoarseOperator(
        space=coarse_space,
        nesting=nesting,
        P=build_prolongation(fine_space, coarse_space, nesting),
        A_H=assemble_iipg(coarse_space, penalty.eta),
        A_H0=assemble_sym(coarse_space, penalty.eta0),
        mode=mode,
        rel_tol=rel_tol,
        restart=restart,
        inner_preconditioner=inner_preconditioner,
    ).prepare()
    logger.info(
        f"Coarse operator on level {coarse_level}: {coarse.n} dofs, eta_H={penalty.eta}, mode={mode}"
        + (f" (rtol={rel_tol}, GMRES({restart}), inner preconditioner {inner_preconditioner})" if mode == ITERATIVE else "")
    )
    return coarse
