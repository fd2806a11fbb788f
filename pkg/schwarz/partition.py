"""
Overlapping rectangular subdomains on a structured mesh.

``ns`` subdomains are laid out as a p×q grid (p columns along x, q rows along
y, subdomain ``k = row * p + column``). Each rectangle is extended by the mesh
size h on every side and clipped to the unit square; a subdomain owns every
element whose closed triangle lies inside its extended rectangle.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

# Vertex coordinates are dyadic, so only rounding in the rectangle bounds matters.
CONTAINMENT_TOL = 1e-12

SUMMARY_COLUMNS = ["subdomain", "x0", "x1", "y0", "y1", "elements", "dofs"]


@dataclass(frozen=True, eq=False)
class SubdomainPartition:
    ns: int
    p: int
    q: int
    rectangles: np.ndarray   # (ns, 4): x0, x1, y0, y1 before extension
    overlap: float
    element_lists: list
    dof_lists: list

    def extended(self, k):
        x0, x1, y0, y1 = self.rectangles[k]
        d = self.overlap
        return max(0.0, x0 - d), min(1.0, x1 + d), max(0.0, y0 - d), min(1.0, y1 + d)

    def multiplicity(self, n_dofs):
        """How many subdomains every dof belongs to."""
        counts = np.zeros(n_dofs, dtype=np.int64)
        for dofs in self.dof_lists:
            counts[dofs] += 1
        return counts


def grid_shape(ns):
    """Factor ``ns`` as p×q with p ≤ q and q − p as small as possible."""
    if not isinstance(ns, (int, np.integer)) or ns < 1:
        raise ValueError(f"Subdomain count must be a positive integer, got {ns!r}")
    p = max(d for d in range(1, math.isqrt(int(ns)) + 1) if ns % d == 0)
    return p, int(ns) // p


def build_partition(mesh, ns):
    p, q = grid_shape(ns)
    n = mesh.n_per_side
    if n % p or n % q:
        raise ValueError(
            f"Cannot split {n}x{n} squares into a {p}x{q} grid of {ns} subdomains"
        )

    xs = np.arange(p + 1) / p
    ys = np.arange(q + 1) / q
    corners = mesh.corners
    dofs_per_element = 3

    rectangles = np.empty((ns, 4))
    element_lists = []
    dof_lists = []
    partition = SubdomainPartition(
        ns=int(ns), p=p, q=q, rectangles=rectangles, overlap=mesh.h,
        element_lists=element_lists, dof_lists=dof_lists,
    )
    for row in range(q):
        for col in range(p):
            k = row * p + col
            rectangles[k] = (xs[col], xs[col + 1], ys[row], ys[row + 1])
            x0, x1, y0, y1 = partition.extended(k)
            inside = (
                (corners[..., 0] >= x0 - CONTAINMENT_TOL) & (corners[..., 0] <= x1 + CONTAINMENT_TOL)
                & (corners[..., 1] >= y0 - CONTAINMENT_TOL) & (corners[..., 1] <= y1 + CONTAINMENT_TOL)
            ).all(axis=1)
            elements = np.flatnonzero(inside)
            dofs = (dofs_per_element * elements[:, None] + np.arange(dofs_per_element)).ravel()
            element_lists.append(elements)
            dof_lists.append(dofs)
            logger.debug(f"Subdomain {k}: [{x0}, {x1}]x[{y0}, {y1}], {elements.size} elements")

    logger.info(f"Partitioned level {mesh.level} mesh into {ns} subdomains ({p}x{q}, overlap h={mesh.h})")
    return partition


def partition_summary(partition, path=None):
    """One row per subdomain; written as CSV when ``path`` is given."""
    rows = []
    for k in range(partition.ns):
        x0, x1, y0, y1 = partition.extended(k)
        rows.append({
            "subdomain": k,
            "x0": x0, "x1": x1, "y0": y0, "y1": y1,
            "elements": int(partition.element_lists[k].size),
            "dofs": int(partition.dof_lists[k].size),
        })
    df = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False)
        logger.info(f"Partition summary written to {path}")
    return df
