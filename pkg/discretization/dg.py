"""
Linear discontinuous Galerkin space on a TriMesh and the interior penalty
forms built on it.

    a_h(u, v) = Σ_K ∫_K ∇u·∇v − Σ_e ∫_e {∇u}·[v] + Σ_e η/|e| ∫_e [u]·[v]   (IIPG)
    a_0(u, v) = Σ_K ∫_K ∇u·∇v + Σ_e η₀/|e| ∫_e [u]·[v]                     (symmetric)

On an interior edge with normal n⁺ leaving K⁺: [v] = (v⁺ − v⁻) n⁺ and
{τ} = (τ⁺ + τ⁻)/2. On a boundary edge [v] = v n and {τ} = τ, which imposes
u = 0 weakly through the penalty.

Degrees of freedom are element-major: dof 3K + i is the Lagrange basis
function of vertex i of triangle K.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from discretization.mesh import build_structured
from linalg.matrix_market import write_matrix_market
from linalg.sparse import as_csr, as_vector

logger = logging.getLogger(__name__)

DOFS_PER_ELEMENT = 3

# Two-point Gauss-Legendre on [0, 1]: exact for the quadratic edge integrands.
_EDGE_T = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
_EDGE_W = np.array([0.5, 0.5])

# Six-point degree-4 triangle rule (barycentric coordinates, weights sum to 1).
_D4_A1, _D4_W1 = 0.44594849091596489, 0.22338158967801147
_D4_A2, _D4_W2 = 0.09157621350977074, 0.10995174365532187


def exact_solution(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def exact_gradient(x, y):
    return np.stack(
        [np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
         np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)],
        axis=-1,
    )


def default_source(x, y):
    """f = −Δu* for u* = sin(πx) sin(πy)."""
    return 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


@dataclass(frozen=True)
class PenaltyConfig:
    eta: float = 5.0
    eta0: float = 5.0

    def __post_init__(self):
        if not self.eta > 0 or not self.eta0 > 0:
            raise ValueError(f"Penalty parameters must be positive, got eta={self.eta}, eta0={self.eta0}")

    def coarse(self, fine_level, coarse_level):
        """Penalties on the coarse mesh, scaled by H/h."""
        ratio = 2.0 ** (fine_level - coarse_level)
        return PenaltyConfig(eta=self.eta * ratio, eta0=self.eta0 * ratio)


def triangle_rule(degree=4):
    """
    Quadrature on a triangle as (barycentric points (Q, 3), weights (Q,)).
    Weights sum to one; multiply by the element area.

    Degree ≤ 4 uses the six-point symmetric rule; higher degrees use a
    collapsed tensor Gauss-Legendre rule.
    """
    if degree <= 4:
        a1, a2 = _D4_A1, _D4_A2
        bary = np.array([
            [a1, a1, 1 - 2 * a1], [a1, 1 - 2 * a1, a1], [1 - 2 * a1, a1, a1],
            [a2, a2, 1 - 2 * a2], [a2, 1 - 2 * a2, a2], [1 - 2 * a2, a2, a2],
        ])
        weights = np.array([_D4_W1] * 3 + [_D4_W2] * 3)
        return bary, weights

    npts = int(math.ceil((degree + 2) / 2))
    s, w = np.polynomial.legendre.leggauss(npts)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    U, V = np.meshgrid(s, s, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    xi = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    weights = 2.0 * (WU * WV * (1.0 - U)).ravel()
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    return bary, weights


@dataclass(frozen=True, eq=False)
class DgSpace:
    mesh: object
    skeleton: object

    @classmethod
    def structured(cls, level):
        mesh, skeleton = build_structured(level)
        return cls(mesh, skeleton)

    @property
    def dofs_per_element(self):
        return DOFS_PER_ELEMENT

    @property
    def n_elements(self):
        return self.mesh.n_triangles

    @property
    def total_dofs(self):
        return DOFS_PER_ELEMENT * self.mesh.n_triangles

    @cached_property
    def element_dofs(self):
        return np.arange(self.total_dofs, dtype=np.int64).reshape(-1, DOFS_PER_ELEMENT)

    @cached_property
    def areas(self):
        return np.abs(self.mesh.signed_areas)

    @cached_property
    def gradients(self):
        """Constant basis gradients per element, shape (n_elements, 3, 2)."""
        p = self.mesh.corners
        twice_area = 2.0 * self.mesh.signed_areas
        nxt = np.roll(p, -1, axis=1)
        prv = np.roll(p, -2, axis=1)
        grads = np.stack([nxt[..., 1] - prv[..., 1], prv[..., 0] - nxt[..., 0]], axis=-1)
        return grads / twice_area[:, None, None]

    def basis_values(self, elements, points):
        """
        Values of the three basis functions of ``elements`` at ``points``
        (shape (E, Q, 2)); returns (E, Q, 3).
        """
        centers = self.mesh.barycenters[elements]
        offsets = points - centers[:, None, :]
        return 1.0 / 3.0 + np.einsum("eqd,eid->eqi", offsets, self.gradients[elements])

    def element_points(self, bary):
        """Physical quadrature points per element, shape (E, Q, 2)."""
        return np.einsum("qi,eid->eqd", bary, self.mesh.corners)


def _edge_points(skeleton, mask, t):
    a = skeleton.endpoints[mask, 0]
    b = skeleton.endpoints[mask, 1]
    return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]


def _coo(rows, cols, vals, n):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


def _block_indices(test_dofs, trial_dofs):
    rows = np.broadcast_to(test_dofs[:, :, None], (test_dofs.shape[0], 3, 3))
    cols = np.broadcast_to(trial_dofs[:, None, :], (trial_dofs.shape[0], 3, 3))
    return rows, cols


def _edge_sides(space):
    """
    Per edge group: (edge mask, [(elements, sign, average weight), ...]).
    Boundary edges have a single side with average weight 1.
    """
    sk = space.skeleton
    inner = sk.interior
    outer = sk.boundary
    return [
        (inner, [(sk.plus[inner], 1.0, 0.5), (sk.minus[inner], -1.0, 0.5)]),
        (outer, [(sk.plus[outer], 1.0, 1.0)]),
    ]


def _assemble_gradient_term(space):
    G = space.gradients
    local = space.areas[:, None, None] * np.einsum("eid,ejd->eij", G, G)
    rows, cols = _block_indices(space.element_dofs, space.element_dofs)
    return _coo(rows, cols, local, space.total_dofs)


def _assemble_penalty_term(space, eta):
    sk = space.skeleton
    parts = []
    for mask, sides in _edge_sides(space):
        if not mask.any():
            continue
        points = _edge_points(sk, mask, _EDGE_T)
        values = [space.basis_values(elems, points) for elems, _, _ in sides]
        for b, (elems_b, sign_b, _) in enumerate(sides):
            for a, (elems_a, sign_a, _) in enumerate(sides):
                # η/|e| ∫_e [φ_j]·[φ_i]; the edge length cancels against the
                # quadrature Jacobian.
                local = eta * sign_a * sign_b * np.einsum("q,eqi,eqj->eij", _EDGE_W, values[b], values[a])
                rows, cols = _block_indices(space.element_dofs[elems_b], space.element_dofs[elems_a])
                parts.append(_coo(rows, cols, local, space.total_dofs))
    return sum(parts[1:], parts[0])


def assemble_flux(space):
    """The consistency term −Σ_e ∫_e {∇u}·[v] on its own."""
    sk = space.skeleton
    parts = []
    for mask, sides in _edge_sides(space):
        if not mask.any():
            continue
        points = _edge_points(sk, mask, _EDGE_T)
        normal = sk.normal[mask]
        length = sk.length[mask]
        for elems_b, sign_b, _ in sides:
            # ∫_e φ_i ds for the test side
            edge_means = length[:, None] * np.einsum("q,eqi->ei", _EDGE_W, space.basis_values(elems_b, points))
            for elems_a, _, weight_a in sides:
                normal_flux = np.einsum("ejd,ed->ej", space.gradients[elems_a], normal)
                local = -weight_a * sign_b * edge_means[:, :, None] * normal_flux[:, None, :]
                rows, cols = _block_indices(space.element_dofs[elems_b], space.element_dofs[elems_a])
                parts.append(_coo(rows, cols, local, space.total_dofs))
    return as_csr(sum(parts[1:], parts[0]).tocsr())


def assemble_sym(space, eta0=5.0):
    """
    A₀: gradient term plus penalty term. The result is symmetrized as
    (S + Sᵀ)/2 so that entries (i, j) and (j, i) are bit-for-bit equal.
    """
    if not eta0 > 0:
        raise ValueError(f"eta0 must be positive, got {eta0}")
    S = as_csr((_assemble_gradient_term(space) + _assemble_penalty_term(space, eta0)).tocsr())
    A0 = as_csr((S + S.T) * 0.5)
    logger.debug(f"Assembled symmetric form: n={A0.shape[0]}, nnz={A0.nnz}, eta0={eta0}")
    return A0


def assemble_iipg(space, eta=5.0):
    """A_h of the incomplete interior penalty method (nonsymmetric)."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    A = as_csr(assemble_sym(space, eta) + assemble_flux(space))
    logger.info(f"Assembled IIPG operator: level {space.mesh.level}, n={A.shape[0]}, nnz={A.nnz}, eta={eta}")
    return A


def assemble_rhs(space, source=None, degree=4):
    """Load vector ∫_Ω f v for every basis function v."""
    source = default_source if source is None else source
    bary, weights = triangle_rule(degree)
    points = space.element_points(bary)
    f = source(points[..., 0], points[..., 1])
    local = space.areas[:, None] * np.einsum("q,eq,qi->ei", weights, f, bary)
    return np.ascontiguousarray(local.ravel())


def interpolate(space, function):
    """Nodal P1 interpolant on every element."""
    corners = space.mesh.corners
    return np.ascontiguousarray(function(corners[..., 0], corners[..., 1]).ravel().astype(np.float64))


@dataclass(frozen=True)
class ErrorNorms:
    l2_error: float
    energy_error: float


def error_norms(space, u_h, eta=5.0, exact=None, exact_grad=None, degree=4):
    """
    L2 and DG energy errors of ``u_h`` against the exact solution.

    energy² = Σ_K ∫_K |∇(u_h − u)|² + Σ_e η/|e| ∫_e |[u_h − u]|².
    The exact solution is assumed continuous, so its jumps vanish on
    interior edges.
    """
    exact = exact_solution if exact is None else exact
    exact_grad = exact_gradient if exact_grad is None else exact_grad
    values = as_vector(u_h, space.total_dofs, "u_h").reshape(-1, DOFS_PER_ELEMENT)

    bary, weights = triangle_rule(degree)
    points = space.element_points(bary)
    uh_at = np.einsum("qi,ei->eq", bary, values)
    diff = uh_at - exact(points[..., 0], points[..., 1])
    l2_sq = np.sum(space.areas[:, None] * weights[None, :] * diff ** 2)

    grad_uh = np.einsum("ei,eid->ed", values, space.gradients)
    grad_diff = grad_uh[:, None, :] - exact_grad(points[..., 0], points[..., 1])
    grad_sq = np.sum(space.areas[:, None] * weights[None, :] * np.sum(grad_diff ** 2, axis=-1))

    t, w = np.polynomial.legendre.leggauss(3)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    sk = space.skeleton
    jump_sq = 0.0
    inner = sk.interior
    if inner.any():
        pts = _edge_points(sk, inner, t)
        up = np.einsum("eqi,ei->eq", space.basis_values(sk.plus[inner], pts), values[sk.plus[inner]])
        um = np.einsum("eqi,ei->eq", space.basis_values(sk.minus[inner], pts), values[sk.minus[inner]])
        jump_sq += eta * np.sum(w[None, :] * (up - um) ** 2)
    outer = sk.boundary
    if outer.any():
        pts = _edge_points(sk, outer, t)
        up = np.einsum("eqi,ei->eq", space.basis_values(sk.plus[outer], pts), values[sk.plus[outer]])
        jump_sq += eta * np.sum(w[None, :] * (up - exact(pts[..., 0], pts[..., 1])) ** 2)

    return ErrorNorms(l2_error=float(np.sqrt(l2_sq)), energy_error=float(np.sqrt(grad_sq + jump_sq)))


def export_system(level, directory, eta=5.0, eta0=5.0):
    """
    Write A_h, A₀ and the load vector (as an n×1 matrix) of the level-``level``
    problem as MatrixMarket files. Returns the written paths by name.
    """
    space = DgSpace.structured(level)
    directory = Path(directory)
    A = assemble_iipg(space, eta)
    A0 = assemble_sym(space, eta0)
    rhs = assemble_rhs(space)
    return {
        "A_h": write_matrix_market(A, directory / f"A_h_level{level}.mtx", comment=f"IIPG eta={eta}"),
        "A0": write_matrix_market(A0, directory / f"A0_level{level}.mtx", comment=f"symmetric eta0={eta0}"),
        "rhs": write_matrix_market(sp.csr_matrix(rhs.reshape(-1, 1)), directory / f"rhs_level{level}.mtx"),
    }
