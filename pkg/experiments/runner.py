"""
Experiment harness: iteration tables over subdomain counts and the dense
verification suite for small levels.
"""
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import pandas as pd
from django.conf import settings

from analysis.constants import (
    check_beta_bounds,
    check_estimate0,
    measure_chain,
    measure_h0,
    verify_double_inverse,
    verify_inverse_pair,
)
from discretization.dg import DgSpace, assemble_iipg, assemble_rhs, assemble_sym
from experiments.serializers import render_table
from krylov.gmres import GmresConfig, gmres_right, gmres_two_prec
from linalg.exceptions import SizeLimitExceeded
from schwarz.coarse import DIRECT, ITERATIVE, build_coarse_operator
from schwarz.partition import build_partition, partition_summary
from schwarz.preconditioner import build_B0, build_preconditioner

logger = logging.getLogger(__name__)

PRECONDITIONERS = ("b", "z", "b+z", "b+bt")
TABLE_COLUMNS = ["ns", "precond", "iterations", "rate", "time_s"]
OUTPUT_FORMATS = ("csv", "json")

MAX_VERIFY_LEVEL = 4
VERIFY_SUBDOMAINS = 4
DOMINATION_SLACK = 1e-12

PRESETS = {
    "table1": {
        "h_level": 7, "H_level": 5, "ns_list": (4, 8, 16, 32, 64, 128),
        "precond": PRECONDITIONERS, "coarse_tol": 1e-10, "restart": None,
    },
    "table4": {
        "h_level": 7, "H_level": 5, "ns_list": (4, 8, 16, 32, 64, 128),
        "precond": ("b", "b+z", "b+bt"), "coarse_tol": 1e-4, "restart": 10,
    },
    "table7": {
        "h_level": 10, "H_level": 6, "ns_list": (32, 64, 128, 256),
        "precond": ("b", "b+z", "b+bt"), "coarse_tol": 1e-4, "restart": 10,
    },
    "table8": {
        "h_level": 10, "H_level": 9, "ns_list": (32, 64, 128, 256),
        "precond": ("b", "b+z", "b+bt"), "coarse_tol": 1e-4, "restart": 10,
    },
}


class ExperimentCellError(RuntimeError):
    """A table cell failed; carries the (ns, precond) it was computing."""

    def __init__(self, ns, precond, cause):
        self.ns = ns
        self.precond = precond
        self.cause = cause
        cell = f"ns={ns}" if precond is None else f"ns={ns}, precond={precond}"
        super().__init__(f"Cell ({cell}) failed: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One iteration table. ``coarse_tol=None`` solves the coarse problem with
    its LU factors; any other value runs the inner GMRES to that tolerance.
    """
    h_level: int = 7
    H_level: int = 5
    ns_list: tuple = (4, 8, 16, 32, 64, 128)
    precond: tuple = PRECONDITIONERS
    rel_tol: float = 1e-6
    restart: Optional[int] = None
    coarse_tol: Optional[float] = 1e-10
    threads: int = 1
    max_iter: int = 500
    eta: float = 5.0
    eta0: float = 5.0
    out: Optional[Path] = None
    format: str = "csv"
    dump_partition: Optional[Path] = None

    def __post_init__(self):
        if self.H_level >= self.h_level:
            raise ValueError(f"H_level ({self.H_level}) must be smaller than h_level ({self.h_level})")
        unknown = [p for p in self.precond if p not in PRECONDITIONERS]
        if unknown:
            raise ValueError(f"Unknown preconditioners {unknown}, expected a subset of {list(PRECONDITIONERS)}")
        if self.format not in OUTPUT_FORMATS:
            raise ValueError(f"Unknown output format '{self.format}', expected one of {list(OUTPUT_FORMATS)}")
        if self.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.threads}")
        if self.coarse_tol is not None and not 0 < self.coarse_tol < 1:
            raise ValueError(f"coarse_tol must lie in (0, 1), got {self.coarse_tol}")

    @classmethod
    def build(cls, preset=None, **overrides):
        """
        Settings defaults, then the preset, then explicit overrides.
        Overrides that are None are ignored, except ``restart`` and
        ``coarse_tol`` when passed as the string "none".
        """
        values = {
            "rel_tol": settings.SOLVER_REL_TOL,
            "max_iter": settings.SOLVER_MAX_ITER,
            "threads": settings.SOLVER_THREADS,
            "eta": settings.PENALTY_ETA,
            "eta0": settings.PENALTY_ETA0,
        }
        if preset is not None:
            if preset not in PRESETS:
                raise ValueError(f"Unknown preset '{preset}', expected one of {sorted(PRESETS)}")
            values.update(PRESETS[preset])
        for key, value in overrides.items():
            if value is None:
                continue
            values[key] = None if value == "none" else value
        known = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in values.items() if key in known})

    @property
    def gmres(self):
        return GmresConfig(rel_tol=self.rel_tol, restart=self.restart, max_iter=self.max_iter)


def _solve(precond, A, B, b, cfg):
    if precond == "b":
        return gmres_right(A, B.apply, b, cfg=cfg)
    if precond == "z":
        return gmres_right(A, B.apply_z, b, cfg=cfg)
    if precond == "b+z":
        return gmres_two_prec(A, B.apply, None, b, cfg=cfg, m2_from_m1=B.apply_z_tail)
    return gmres_two_prec(A, B.apply, B.apply_transpose, b, cfg=cfg)


def run_table(config):
    """
    Iterations to convergence for every (ns, precond) cell. The fine problem
    and the coarse operator are assembled once; every ns gets its own
    partition and local factorizations.

    The residual histories are attached as ``table.attrs["residual_history"]``
    keyed by (ns, precond).
    """
    table = pd.DataFrame(columns=TABLE_COLUMNS)
    table.attrs["residual_history"] = {}
    if not config.ns_list or not config.precond:
        logger.info("Empty experiment: no subdomain counts or no preconditioners requested")
        return _finish_table(table, config)

    # 1) fine problem and coarse space, shared by every cell
    space = DgSpace.structured(config.h_level)
    A = assemble_iipg(space, config.eta)
    A0 = assemble_sym(space, config.eta0)
    b = assemble_rhs(space)
    coarse = build_coarse_operator(
        space, config.H_level, eta=config.eta, eta0=config.eta0,
        mode=DIRECT if config.coarse_tol is None else ITERATIVE,
        rel_tol=config.coarse_tol if config.coarse_tol is not None else 1e-10,
        restart=settings.COARSE_INNER_RESTART,
        inner_preconditioner=settings.COARSE_INNER_PRECONDITIONER,
    )
    logger.info(
        f"Experiment h=2^-{config.h_level}, H=2^-{config.H_level}: n={space.total_dofs}, "
        f"ns={list(config.ns_list)}, precond={list(config.precond)}"
    )

    rows = []
    histories = {}
    for ns in config.ns_list:
        # 2) partition and local factorizations for this ns
        try:
            partition = build_partition(space.mesh, ns)
            if config.dump_partition is not None:
                directory = Path(config.dump_partition)
                directory.mkdir(parents=True, exist_ok=True)
                partition_summary(partition, directory / f"partition_ns{ns}.csv")
            B = build_preconditioner(A, A0, partition, coarse, threads=config.threads)
        except Exception as exc:
            raise ExperimentCellError(ns, None, exc) from exc

        # 3) one solve per preconditioner
        for precond in config.precond:
            try:
                _, report = _solve(precond, A, B, b, config.gmres)
            except Exception as exc:
                raise ExperimentCellError(ns, precond, exc) from exc
            logger.info(f"ns={ns:4d} {precond:5s}: {report.iterations} iterations, converged={report.converged}")
            rows.append({
                "ns": ns,
                "precond": precond,
                "iterations": report.iterations,
                "rate": report.convergence_rate,
                "time_s": report.wall_time,
            })
            histories[(ns, precond)] = list(report.residual_history)

    table = pd.DataFrame(rows, columns=TABLE_COLUMNS)
    table.attrs["residual_history"] = histories
    return _finish_table(table, config)


def _finish_table(table, config):
    if config.out is not None:
        write_table(table, config.out, config.format)
    return table


def write_table(table, path, fmt="csv"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        table.to_csv(path, index=False, columns=TABLE_COLUMNS)
    else:
        path.write_bytes(render_table(table))
    logger.info(f"Wrote {len(table)} rows to {path}")
    return path


def iteration_pivot(table):
    """ns × precond view of the iteration counts, as the tables are usually read."""
    if table.empty:
        return table
    pivot = table.pivot(index="ns", columns="precond", values="iterations")
    return pivot[[p for p in PRECONDITIONERS if p in pivot.columns]]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class VerifySummary:
    level: int
    checks: list = field(default_factory=list)
    chain: object = None

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    @property
    def failed(self):
        return [check.name for check in self.checks if not check.passed]


def run_verify(level, tamper_alpha0=1.0, threads=None, n_limit=None):
    """
    Dense verification suite on a small level (ns=4, coarse level
    max(1, level − 2), exact coarse solves):

    h0            constants of (A_h, A₀) are positive and ordered
    inverse_pair  the inverse pair keeps the transferred constants
    double_inverse the inverse of the inverse pair closes the chain
    beta_bounds   measured (β₀, β₁) lie within the closed-form bounds
    estimate      Z-preconditioned residuals in the Z⁻¹ norm obey the α bound
    domination    the combined method beats the best single Z step each
                  iteration and needs no more iterations than Z alone

    ``tamper_alpha0`` multiplies the measured α₀ before the estimate check.
    """
    threads = threads or settings.SOLVER_THREADS
    n_limit = n_limit or settings.ANALYSIS_DENSE_LIMIT
    if level > MAX_VERIFY_LEVEL:
        raise SizeLimitExceeded(f"Verification is limited to levels <= {MAX_VERIFY_LEVEL}, got {level}")
    if level < 2:
        raise ValueError(f"Verification needs a level of at least 2, got {level}")

    space = DgSpace.structured(level)
    A = assemble_iipg(space, settings.PENALTY_ETA)
    A0 = assemble_sym(space, settings.PENALTY_ETA0)
    b = assemble_rhs(space)
    partition = build_partition(space.mesh, VERIFY_SUBDOMAINS)
    coarse = build_coarse_operator(space, max(1, level - 2), eta=settings.PENALTY_ETA, eta0=settings.PENALTY_ETA0)
    B = build_preconditioner(A, A0, partition, coarse, threads=threads)
    B0 = build_B0(A0, partition, coarse, threads=threads)
    checks = []

    c = measure_h0(A, A0, n_limit)
    checks.append(Check("h0", 0 < c.c0 <= c.c1, f"c0={c.c0:.6e}, c1={c.c1:.6e}"))

    inverse = verify_inverse_pair(c, A, A0, n_limit)
    checks.append(Check(
        "inverse_pair", inverse.passed,
        f"slack lower={inverse.lower_slack:.3e}, upper={inverse.upper_slack:.3e}",
    ))

    double = verify_double_inverse(A, A0, n_limit)
    checks.append(Check(
        "double_inverse", double.passed,
        f"c0''={double.second.measured.c0:.6e} >= {double.closure_lower:.6e}, "
        f"c1''={double.second.measured.c1:.6e} <= {double.closure_upper:.6e}",
    ))

    chain = measure_chain(A, A0, B, B0, coarse_pair=(coarse.A_H, coarse.A_H0), threads=threads, n_limit=n_limit)
    beta = check_beta_bounds(chain)
    checks.append(Check(
        "beta_bounds", beta.passed,
        f"beta=({beta.measured_beta0:.4e}, {beta.measured_beta1:.4e}), "
        f"bounds=({beta.lower_bound:.4e}, {beta.upper_bound:.4e})",
    ))

    weighted = GmresConfig(rel_tol=settings.SOLVER_REL_TOL, max_iter=settings.SOLVER_MAX_ITER, weight=B.apply_z)
    _, z_report = gmres_right(A, B.apply_z, b, cfg=weighted)
    estimate = check_estimate0(z_report.residual_history, tamper_alpha0 * chain.alpha0, chain.alpha1)
    checks.append(Check(
        "estimate", z_report.converged and estimate.passed,
        f"factor={estimate.factor:.4f}, tightest step {estimate.tightest_step}, violations {estimate.violations[:10]}",
    ))

    _, combined = gmres_two_prec(A, B.apply, None, b, cfg=weighted, m2_from_m1=B.apply_z_tail)
    history = combined.residual_history
    dominated = [
        m for m, entry in enumerate(combined.coefficient_trace)
        if history[m + 1] > entry["single_direction_bound"] + DOMINATION_SLACK * history[0]
    ]
    checks.append(Check(
        "domination", combined.converged and not dominated and combined.iterations <= z_report.iterations,
        f"{combined.iterations} iterations (Z alone {z_report.iterations}), violations {dominated[:10]}",
    ))

    summary = VerifySummary(level=level, checks=checks, chain=chain)
    if summary.passed:
        logger.info(f"Verification at level {level} passed ({len(checks)} checks)")
    else:
        logger.warning(f"Verification at level {level} failed: {summary.failed}")
    return summary
