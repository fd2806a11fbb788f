"""
Right-preconditioned residual minimization.

gmres_right    flexible restarted GMRES with one preconditioner.
gmres_two_prec GCR-type method that combines two preconditioned residuals per
               step, r_{m+1} = r_m − A(α₁ M₁⁻¹r_m + α₂ M₂⁻¹r_m + Σ_j c_j d_j),
               with the coefficients chosen to minimize the residual norm.

Both minimize the residual in the inner product (u, v) = uᵀ W⁻¹ v, where W⁻¹
is the optional ``weight`` of the config (Euclidean when absent). W⁻¹ must be
symmetric positive definite.
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from linalg.exceptions import DimensionMismatch
from linalg.sparse import as_vector

logger = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-14
GRAM_DET_TOL = 1e-14


def as_operator(op, n):
    """LinearOperator from a matrix, a LinearOperator or a plain callable."""
    if op is None:
        return spla.LinearOperator((n, n), matvec=lambda v: v, dtype=np.float64)
    if callable(op) and not hasattr(op, "shape"):
        return spla.LinearOperator((n, n), matvec=op, dtype=np.float64)
    if hasattr(op, "apply") and not hasattr(op, "matvec"):
        return spla.LinearOperator((n, n), matvec=op.apply, dtype=np.float64)
    operator = spla.aslinearoperator(op)
    if operator.shape != (n, n):
        raise DimensionMismatch(f"Operator has shape {operator.shape}, expected {(n, n)}")
    return operator


def _apply(operator, v):
    return np.asarray(operator.matvec(v), dtype=np.float64).ravel()


@dataclass(frozen=True)
class GmresConfig:
    rel_tol: float = 1e-6
    restart: Optional[int] = None
    max_iter: int = 500
    weight: Optional[Callable] = None
    record_history: bool = True

    def __post_init__(self):
        if not 0 < self.rel_tol < 1:
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.restart is not None and self.restart < 1:
            raise ValueError(f"restart must be at least 1, got {self.restart}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")

    def weigh(self, v):
        """W⁻¹ v (v itself for the Euclidean norm)."""
        if self.weight is None:
            return v
        return np.asarray(self.weight(v), dtype=np.float64).ravel()

    @property
    def norm_name(self):
        return "euclidean" if self.weight is None else "weighted"

    def echo(self):
        return {
            "rel_tol": self.rel_tol,
            "restart": self.restart,
            "max_iter": self.max_iter,
            "residual_norm": self.norm_name,
        }


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    stagnated: bool = False
    residual_history: list = field(default_factory=list)
    coefficient_trace: list = field(default_factory=list)
    wall_time: float = 0.0
    true_residual: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def convergence_rate(self):
        if len(self.residual_history) < 2:
            return None
        return residual_rate(self)

    @property
    def relative_residual(self):
        if not self.residual_history or self.residual_history[0] == 0:
            return 0.0
        return self.true_residual / self.residual_history[0]

    def as_dict(self):
        data = asdict(self)
        data["convergence_rate"] = self.convergence_rate
        return data


def residual_rate(report):
    """Factor by which the last iteration reduced the residual."""
    history = report.residual_history
    if len(history) < 2:
        raise ValueError(f"A convergence rate needs at least two residuals, got {len(history)}")
    if history[-2] == 0:
        return 0.0
    return history[-1] / history[-2]


def _norm(v, weighted_v):
    return float(np.sqrt(max(v @ weighted_v, 0.0)))


def _start(A, b, x0, cfg):
    n = A.shape[0]
    b = as_vector(b, n, "right-hand side")
    x = np.zeros(n) if x0 is None else as_vector(x0, n, "initial guess").copy()
    r = b - _apply(A, x) if np.any(x) else b.copy()
    return b, x, r


def _finish(report, started, method):
    report.wall_time = time.perf_counter() - started
    if report.converged:
        logger.info(
            f"{method} converged in {report.iterations} iterations "
            f"(relative residual {report.relative_residual:.3e}, {report.wall_time:.2f}s)"
        )
    elif report.stagnated:
        logger.warning(f"{method} stagnated after {report.iterations} iterations")
    else:
        logger.warning(
            f"{method} did not converge in {report.iterations} iterations "
            f"(relative residual {report.relative_residual:.3e})"
        )
    return report


def _record(report, cfg, value):
    # without full history only the initial and the latest residual are kept
    if cfg.record_history or len(report.residual_history) < 2:
        report.residual_history.append(value)
    else:
        report.residual_history[-1] = value


def gmres_right(A, M_inv, b, x0=None, cfg=None):
    """
    Flexible GMRES: solve A x = b with x = x0 + Σ_j y_j M⁻¹ v_j, keeping the
    preconditioned vectors M⁻¹ v_j so that M⁻¹ may change between calls.

    ``residual_history`` holds the minimized residual norm after every
    iteration; at the end of each cycle the last entry is replaced by the
    recomputed ‖b − A x‖.
    """
    cfg = cfg or GmresConfig()
    started = time.perf_counter()
    n = A.shape[0]
    A = as_operator(A, n)
    M = as_operator(M_inv, n)
    b, x, r = _start(A, b, x0, cfg)

    report = SolveReport(config=cfg.echo())
    beta = _norm(r, cfg.weigh(r))
    report.residual_history.append(beta)
    report.true_residual = beta
    if beta == 0.0:
        report.converged = True
        return x, _finish(report, started, "GMRES")
    target = cfg.rel_tol * beta
    cycle_length = cfg.restart or cfg.max_iter

    while report.iterations < cfg.max_iter:
        Wr = cfg.weigh(r)
        beta = _norm(r, Wr)
        V = [r / beta]
        WV = [Wr / beta]
        Z = []
        H = np.zeros((cycle_length + 1, cycle_length))
        cs = np.zeros(cycle_length)
        sn = np.zeros(cycle_length)
        g = np.zeros(cycle_length + 1)
        g[0] = beta
        breakdown = False

        j = 0
        while j < cycle_length and report.iterations < cfg.max_iter:
            z = _apply(M, V[j])
            w = _apply(A, z)
            Ww = cfg.weigh(w)
            size = _norm(w, Ww)
            for i in range(j + 1):
                H[i, j] = w @ WV[i]
                w = w - H[i, j] * V[i]
                Ww = Ww - H[i, j] * WV[i]
            H[j + 1, j] = _norm(w, Ww)
            Z.append(z)

            for i in range(j):
                H[i, j], H[i + 1, j] = (
                    cs[i] * H[i, j] + sn[i] * H[i + 1, j],
                    -sn[i] * H[i, j] + cs[i] * H[i + 1, j],
                )
            denom = np.hypot(H[j, j], H[j + 1, j])
            breakdown = H[j + 1, j] <= BREAKDOWN_TOL * max(size, 1e-300)
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            if not breakdown:
                V.append(w / H[j + 1, j])
                WV.append(Ww / H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]

            j += 1
            report.iterations += 1
            estimate = abs(g[j])
            _record(report, cfg, estimate)
            logger.debug(f"GMRES iteration {report.iterations}: residual {estimate:.6e}")
            if estimate <= target or breakdown:
                break

        # Hessenberg solve on the leading j×j block
        diag = np.abs(np.diag(H[:j, :j]))
        keep = j
        while keep > 0 and diag[keep - 1] == 0.0:
            keep -= 1
        if keep:
            y = scipy.linalg.solve_triangular(H[:keep, :keep], g[:keep])
            x = x + np.column_stack(Z[:keep]) @ y

        r = b - _apply(A, x)
        report.true_residual = _norm(r, cfg.weigh(r))
        report.residual_history[-1] = report.true_residual
        if report.true_residual <= target:
            report.converged = True
            break
        if breakdown:
            report.stagnated = True
            break

    return x, _finish(report, started, "GMRES")


@dataclass
class TwoPrecState:
    """
    Search directions of the current cycle and their A-images, kept
    orthonormal in the residual inner product, plus the W⁻¹-images of the
    A-images so inner products need no further W⁻¹ applications.
    """
    directions: list = field(default_factory=list)
    images: list = field(default_factory=list)
    weighted_images: list = field(default_factory=list)

    def __len__(self):
        return len(self.directions)

    def reset(self):
        self.directions.clear()
        self.images.clear()
        self.weighted_images.clear()

    def project(self, image, weighted_image):
        """
        Remove the span of the stored images from ``image``. Returns the
        projected image, its W⁻¹-image and the projection coefficients.
        """
        coefficients = np.array([image @ wd for wd in self.weighted_images])
        for c, d, wd in zip(coefficients, self.images, self.weighted_images):
            image = image - c * d
            weighted_image = weighted_image - c * wd
        return image, weighted_image, coefficients

    def combine(self, vector, coefficients):
        for c, d in zip(coefficients, self.directions):
            vector = vector - c * d
        return vector

    def append(self, direction, image, weighted_image):
        size = _norm(image, weighted_image)
        if size == 0.0:
            return False
        self.directions.append(direction / size)
        self.images.append(image / size)
        self.weighted_images.append(weighted_image / size)
        return True

    def gram(self):
        """Inner products of the stored images (the identity up to rounding)."""
        k = len(self.images)
        G = np.empty((k, k))
        for i in range(k):
            for j in range(k):
                G[i, j] = self.images[i] @ self.weighted_images[j]
        return G


def solve_gram(G11, G12, G22, rhs1, rhs2):
    """
    Minimize ‖r − a₁ p_f − a₂ p_g‖ given the Gram entries of (p_f, p_g) and
    the right-hand sides (r, p_f), (r, p_g).

    Returns (a₁, a₂, fallback). When the 2×2 system is singular to working
    precision the better single direction is used instead; (0, 0, True)
    means neither direction reduces the residual.
    """
    det = G11 * G22 - G12 * G12
    if G11 > 0 and G22 > 0 and det > GRAM_DET_TOL * G11 * G22:
        return (rhs1 * G22 - rhs2 * G12) / det, (rhs2 * G11 - rhs1 * G12) / det, False
    gain1 = rhs1 * rhs1 / G11 if G11 > 0 else 0.0
    gain2 = rhs2 * rhs2 / G22 if G22 > 0 else 0.0
    if gain1 == 0.0 and gain2 == 0.0:
        return 0.0, 0.0, True
    if gain1 >= gain2:
        return rhs1 / G11, 0.0, True
    return 0.0, rhs2 / G22, True


def gmres_two_prec(A, M1_inv, M2_inv, b, x0=None, cfg=None, m2_from_m1=None, callback=None):
    """
    Minimal residual method with two preconditioners per step.

    Each step builds f = M₁⁻¹r and g = M₂⁻¹r, projects Af and Ag against the
    stored images A d_j and picks the combination of the two projected
    directions that minimizes the new residual. ``m2_from_m1`` computes
    M₂⁻¹r from f = M₁⁻¹r when that is cheaper (Z⁻¹r = B⁻ᵀA₀(B⁻¹r)), in which
    case ``M2_inv`` is not called. ``callback(state, report)`` runs after
    every step.

    The coefficient trace records per step: alpha_1 and alpha_2 (the weights
    of f and g), sigma = alpha_2/alpha_1, the residual reachable with g alone
    (single_direction_bound) and whether the Gram fallback was used.
    """
    cfg = cfg or GmresConfig()
    started = time.perf_counter()
    n = A.shape[0]
    A = as_operator(A, n)
    M1 = as_operator(M1_inv, n)
    M2 = None if m2_from_m1 is not None else as_operator(M2_inv, n)
    b, x, r = _start(A, b, x0, cfg)

    report = SolveReport(config=cfg.echo())
    Wr = cfg.weigh(r)
    rnorm = _norm(r, Wr)
    report.residual_history.append(rnorm)
    report.true_residual = rnorm
    if rnorm == 0.0:
        report.converged = True
        return x, _finish(report, started, "Two-preconditioner GMRES")
    target = cfg.rel_tol * rnorm

    state = TwoPrecState()
    while report.iterations < cfg.max_iter:
        f = _apply(M1, r)
        g = m2_from_m1(f) if m2_from_m1 is not None else _apply(M2, r)
        Af, Ag = _apply(A, f), _apply(A, g)
        WAf, WAg = cfg.weigh(Af), cfg.weigh(Ag)

        # best residual with the second preconditioner alone
        Ag_sq = Ag @ WAg
        along_g = r @ WAg
        single = np.sqrt(max(rnorm * rnorm - along_g * along_g / Ag_sq, 0.0)) if Ag_sq > 0 else rnorm

        pf, Wpf, cf = state.project(Af, WAf)
        pg, Wpg, cg = state.project(Ag, WAg)
        a1, a2, fallback = solve_gram(pf @ Wpf, pf @ Wpg, pg @ Wpg, r @ Wpf, r @ Wpg)
        if fallback:
            logger.warning(f"Gram system singular at iteration {report.iterations + 1}; using a single direction")
        if a1 == 0.0 and a2 == 0.0:
            report.stagnated = True
            break

        w = a1 * state.combine(f, cf) + a2 * state.combine(g, cg)
        Aw = a1 * pf + a2 * pg
        WAw = a1 * Wpf + a2 * Wpg
        x = x + w
        r = r - Aw
        Wr = Wr - WAw
        rnorm = _norm(r, Wr)
        state.append(w, Aw, WAw)

        report.iterations += 1
        report.coefficient_trace.append({
            "alpha_1": float(a1),
            "alpha_2": float(a2),
            "sigma": float(a2 / a1) if a1 != 0.0 else None,
            "single_direction_bound": float(single),
            "fallback": bool(fallback),
        })
        _record(report, cfg, rnorm)
        logger.debug(f"Two-preconditioner iteration {report.iterations}: residual {rnorm:.6e}, a1={a1:.3e}, a2={a2:.3e}")
        if callback is not None:
            callback(state, report)

        cycle_end = cfg.restart is not None and len(state) >= cfg.restart
        if rnorm <= target or cycle_end or report.iterations >= cfg.max_iter:
            r = b - _apply(A, x)
            Wr = cfg.weigh(r)
            rnorm = _norm(r, Wr)
            report.residual_history[-1] = rnorm
            report.true_residual = rnorm
            if rnorm <= target:
                report.converged = True
                break
            if cycle_end:
                state.reset()

    if not report.converged:
        r = b - _apply(A, x)
        report.true_residual = _norm(r, cfg.weigh(r))
    return x, _finish(report, started, "Two-preconditioner GMRES")
