"""
Dense measurements of coercivity/boundedness constants.

A pair (M, M0) with M0 symmetric positive definite has constants (c0, c1)
when for all v, w

    vᵀ M v ≥ c0 · vᵀ M0 v        and        wᵀ M v ≤ c1 · ‖w‖_{M0} ‖v‖_{M0}.

With M0 = L Lᵀ and K = L⁻¹ M L⁻ᵀ these are the smallest eigenvalue of the
symmetric part of K and the largest singular value of K.

Everything here works on dense matrices and is meant for small levels.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from joblib import Parallel, delayed

from krylov.gmres import as_operator
from linalg.exceptions import NotPositiveDefinite, SizeLimitExceeded

logger = logging.getLogger(__name__)

DEFAULT_DENSE_LIMIT = 4000
BOUND_SLACK = 1e-8
ESTIMATE_SLACK = 1e-9
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class H0Constants:
    c0: float
    c1: float


@dataclass(frozen=True)
class ChainConstants:
    gamma0: float
    gamma1: float
    beta0: float
    beta1: float
    alpha0: float
    alpha1: float
    fine: H0Constants
    coarse: H0Constants = None

    @property
    def effective(self):
        """Constants valid for the fine pair and the coarse pair at once."""
        if self.coarse is None:
            return self.fine
        return H0Constants(c0=min(self.fine.c0, self.coarse.c0), c1=max(self.fine.c1, self.coarse.c1))

    @property
    def contraction(self):
        """(1 − √(α₀/α₁))^(1/2), the per-iteration factor of the Z-preconditioned bound."""
        return math.sqrt(max(0.0, 1.0 - math.sqrt(self.alpha0 / self.alpha1)))


def _check_size(n, n_limit):
    if n > n_limit:
        raise SizeLimitExceeded(f"Dense analysis of a {n}x{n} problem exceeds the limit of {n_limit}")


def densify(op, n, threads=1, n_limit=DEFAULT_DENSE_LIMIT):
    """Dense matrix of an operator, assembled column by column."""
    _check_size(n, n_limit)
    if sp.issparse(op):
        return op.toarray()
    if isinstance(op, np.ndarray):
        return np.array(op, dtype=np.float64)
    operator = as_operator(op, n)

    def column(j):
        e = np.zeros(n)
        e[j] = 1.0
        return np.asarray(operator.matvec(e), dtype=np.float64).ravel()

    columns = Parallel(n_jobs=threads, prefer="threads")(delayed(column)(j) for j in range(n))
    return np.column_stack(columns)


def _dense(M, n_limit):
    if sp.issparse(M):
        _check_size(M.shape[0], n_limit)
        return M.toarray()
    M = np.asarray(M, dtype=np.float64)
    _check_size(M.shape[0], n_limit)
    return M


def _cholesky(M0):
    scale = max(np.abs(M0).max(), 1e-300)
    if np.abs(M0 - M0.T).max() > SYMMETRY_TOL * scale:
        raise NotPositiveDefinite("Reference matrix is not symmetric")
    try:
        return scipy.linalg.cholesky(M0, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Reference matrix is not positive definite: {exc}") from exc


def congruence(M, L):
    """L⁻¹ M L⁻ᵀ for a lower triangular L."""
    X = scipy.linalg.solve_triangular(L, M, lower=True)
    return scipy.linalg.solve_triangular(L, X.T, lower=True).T


def measure_h0(M, M0, n_limit=DEFAULT_DENSE_LIMIT):
    """Coercivity and boundedness constants of M relative to the SPD M0."""
    M = _dense(M, n_limit)
    M0 = _dense(M0, n_limit)
    K = congruence(M, _cholesky(M0))
    c0 = float(scipy.linalg.eigvalsh(0.5 * (K + K.T)).min())
    c1 = float(scipy.linalg.svdvals(K)[0])
    logger.debug(f"Measured constants of a {M.shape[0]}x{M.shape[0]} pair: c0={c0:.6e}, c1={c1:.6e}")
    return H0Constants(c0=c0, c1=c1)


@dataclass(frozen=True)
class InversePairReport:
    constants: H0Constants
    measured: H0Constants
    lower_bound: float
    upper_bound: float

    @property
    def lower_slack(self):
        return self.measured.c0 - self.lower_bound

    @property
    def upper_slack(self):
        return self.upper_bound - self.measured.c1

    @property
    def passed(self):
        return self.lower_slack >= -BOUND_SLACK and self.upper_slack >= -BOUND_SLACK


def verify_inverse_pair(c, M, M0, n_limit=DEFAULT_DENSE_LIMIT):
    """
    Measure (M⁻¹, M0⁻¹) and compare with (c0/c1², 1/c0), the constants the
    pair (M, M0) with constants ``c`` passes on to its inverses.
    """
    M = _dense(M, n_limit)
    M0 = _dense(M0, n_limit)
    measured = measure_h0(np.linalg.inv(M), _symmetrize(np.linalg.inv(M0)), n_limit)
    report = InversePairReport(
        constants=c,
        measured=measured,
        lower_bound=c.c0 / c.c1 ** 2,
        upper_bound=1.0 / c.c0,
    )
    if not report.passed:
        logger.warning(
            f"Inverse pair bounds violated: lower slack {report.lower_slack:.3e}, upper slack {report.upper_slack:.3e}"
        )
    return report


@dataclass(frozen=True)
class DoubleInverseReport:
    first: InversePairReport
    second: InversePairReport
    closure_lower: float
    closure_upper: float

    @property
    def passed(self):
        measured = self.second.measured
        return (
            self.first.passed and self.second.passed
            and measured.c0 >= self.closure_lower - BOUND_SLACK
            and measured.c1 <= self.closure_upper + BOUND_SLACK
        )


def verify_double_inverse(M, M0, n_limit=DEFAULT_DENSE_LIMIT):
    """
    Apply the inverse-pair check twice: (M, M0) → (M⁻¹, M0⁻¹) → (M, M0). The
    constants measured at the end must respect (c0³/c1², c1²/c0).
    """
    M = _dense(M, n_limit)
    M0 = _dense(M0, n_limit)
    c = measure_h0(M, M0, n_limit)
    first = verify_inverse_pair(c, M, M0, n_limit)
    second = verify_inverse_pair(first.measured, np.linalg.inv(M), _symmetrize(np.linalg.inv(M0)), n_limit)
    return DoubleInverseReport(
        first=first,
        second=second,
        closure_lower=c.c0 ** 3 / c.c1 ** 2,
        closure_upper=c.c1 ** 2 / c.c0,
    )


def _symmetrize(M):
    return 0.5 * (M + M.T)


def measure_chain(A, A0, B, B0, Z=None, coarse_pair=None, threads=1, n_limit=DEFAULT_DENSE_LIMIT):
    """
    Measure the constant chain of a Schwarz preconditioned problem:

    gamma: γ₀ vᵀB₀v ≤ vᵀA₀v ≤ γ₁ vᵀB₀v
    beta:  constants of the pair (B, A₀)
    alpha: constants of the pair (A, Z), Z = B A₀⁻¹ Bᵀ

    ``B``, ``B0`` and ``Z`` are inverse actions (B⁻¹, B₀⁻¹, Z⁻¹); Z defaults
    to ``B.apply_z``. ``coarse_pair`` is (A_H, A_H0) when a coarse space is
    used.
    """
    A = _dense(A, n_limit)
    A0 = _dense(A0, n_limit)
    n = A.shape[0]
    if Z is None:
        Z = B.apply_z
    Binv = densify(B, n, threads, n_limit)
    B0inv = _symmetrize(densify(B0, n, threads, n_limit))
    Zinv = _symmetrize(densify(Z, n, threads, n_limit))

    L0 = _cholesky(A0)
    gammas = scipy.linalg.eigvalsh(L0.T @ B0inv @ L0)
    beta = measure_h0(np.linalg.inv(Binv), A0, n_limit)
    alpha = measure_h0(A, _symmetrize(np.linalg.inv(Zinv)), n_limit)
    fine = measure_h0(A, A0, n_limit)
    coarse = measure_h0(*coarse_pair, n_limit=n_limit) if coarse_pair is not None else None

    chain = ChainConstants(
        gamma0=float(gammas.min()),
        gamma1=float(gammas.max()),
        beta0=beta.c0,
        beta1=beta.c1,
        alpha0=alpha.c0,
        alpha1=alpha.c1,
        fine=fine,
        coarse=coarse,
    )
    logger.info(
        f"Constant chain (n={n}): gamma=({chain.gamma0:.4e}, {chain.gamma1:.4e}), "
        f"beta=({chain.beta0:.4e}, {chain.beta1:.4e}), alpha=({chain.alpha0:.4e}, {chain.alpha1:.4e})"
    )
    return chain


def closed_form_bounds(c0, c1, gamma0, gamma1):
    """
    Closed-form constants of (B, A₀) and (A, Z) in terms of (c0, c1, γ₀, γ₁).

    Two expressions circulate for α₁: c₁²/(c₀³γ₁) and the one obtained from
    α₁ = c₁/β₀, namely c₁³γ₁/c₀³. Both are returned; neither is asserted.
    """
    beta0 = c0 ** 3 / (c1 ** 2 * gamma1)
    beta1 = c1 ** 2 / (c0 * gamma0)
    return {
        "beta0": beta0,
        "beta1": beta1,
        "alpha0": c0 ** 2 * gamma0 / c1 ** 2,
        "alpha1_printed": c1 ** 2 / (c0 ** 3 * gamma1),
        "alpha1_derived": c1 / beta0,
    }


@dataclass(frozen=True)
class BetaBoundsReport:
    measured_beta0: float
    measured_beta1: float
    lower_bound: float
    upper_bound: float
    bounds: dict = field(default_factory=dict)

    @property
    def passed(self):
        return (
            self.measured_beta0 > 0
            and self.measured_beta0 >= self.lower_bound - BOUND_SLACK
            and self.measured_beta1 <= self.upper_bound + BOUND_SLACK
        )


def check_beta_bounds(chain):
    """Compare the measured (β₀, β₁) with the closed forms built from effective constants."""
    c = chain.effective
    bounds = closed_form_bounds(c.c0, c.c1, chain.gamma0, chain.gamma1)
    report = BetaBoundsReport(
        measured_beta0=chain.beta0,
        measured_beta1=chain.beta1,
        lower_bound=bounds["beta0"],
        upper_bound=bounds["beta1"],
        bounds=bounds,
    )
    if not report.passed:
        logger.warning(
            f"beta bounds violated: measured ({chain.beta0:.4e}, {chain.beta1:.4e}), "
            f"bounds ({report.lower_bound:.4e}, {report.upper_bound:.4e})"
        )
    return report


@dataclass(frozen=True)
class EstimateReport:
    passed: bool
    factor: float
    tightest_step: int
    tightest_ratio: float
    violations: list = field(default_factory=list)


def check_estimate0(history, alpha0, alpha1):
    """
    Check ‖r_m‖ ≤ (1 − √(α₀/α₁))^(m/2) ‖r_0‖ for every m with relative slack.

    ``history`` holds residual norms in the Z⁻¹-weighted norm. An α₀/α₁ ≥ 1
    collapses the bound to zero after the first step.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.size == 0:
        raise ValueError("check_estimate0 needs a non-empty residual history")
    if not alpha0 > 0 or not alpha1 > 0:
        raise ValueError(f"alpha0 and alpha1 must be positive, got {alpha0}, {alpha1}")

    base = max(0.0, 1.0 - math.sqrt(alpha0 / alpha1))
    steps = np.arange(history.size)
    bound = history[0] * np.power(base, steps / 2.0)
    bound[0] = history[0]
    allowed = bound * (1.0 + ESTIMATE_SLACK)

    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(bound > 0, history / bound, np.where(history > 0, np.inf, 0.0))
    violations = [int(m) for m in np.flatnonzero(history > allowed)]
    tightest = int(np.argmax(ratios[1:])) + 1 if history.size > 1 else 0
    report = EstimateReport(
        passed=not violations,
        factor=math.sqrt(base),
        tightest_step=tightest,
        tightest_ratio=float(ratios[tightest]),
        violations=violations,
    )
    if violations:
        logger.warning(f"Residual bound violated at steps {violations[:10]}")
    return report
