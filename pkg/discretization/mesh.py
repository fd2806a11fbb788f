"""
Nested structured triangulations of the unit square and their edge skeleton.

Level ``L`` splits [0,1]² into N = 2^L squares per side; every square is cut
by the diagonal from its lower-left to its upper-right corner. Vertices are
numbered row by row (x fastest), triangles square by square with the
lower-right triangle first.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MIN_LEVEL = 1
MAX_LEVEL = 12


@dataclass(frozen=True, eq=False)
class TriMesh:
    level: int
    h: float
    vertices: np.ndarray   # (n_vertices, 2)
    triangles: np.ndarray  # (n_triangles, 3), counterclockwise

    @property
    def n_per_side(self):
        return 2 ** self.level

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @cached_property
    def corners(self):
        """Vertex coordinates per triangle, shape (n_triangles, 3, 2)."""
        return self.vertices[self.triangles]

    @cached_property
    def signed_areas(self):
        p = self.corners
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def barycenters(self):
        return self.corners.mean(axis=1)


@dataclass(frozen=True, eq=False)
class EdgeSkeleton:
    """
    All edges of a TriMesh.

    ``plus`` is the element with the smaller index, ``minus`` the other one
    (-1 on the boundary). ``normal`` points out of ``plus``; ``endpoints``
    are ordered counterclockwise with respect to ``plus``.
    """
    vertex_pairs: np.ndarray  # (n_edges, 2) vertex indices
    endpoints: np.ndarray     # (n_edges, 2, 2) coordinates
    length: np.ndarray        # (n_edges,)
    normal: np.ndarray        # (n_edges, 2)
    plus: np.ndarray          # (n_edges,)
    minus: np.ndarray         # (n_edges,), -1 on the boundary

    @property
    def n_edges(self):
        return self.length.shape[0]

    @property
    def boundary(self):
        return self.minus < 0

    @property
    def interior(self):
        return self.minus >= 0

    def flipped(self):
        """
        The same skeleton with the opposite K⁺/K⁻ convention on interior
        edges. The assembled bilinear forms must not depend on the choice.
        """
        inner = self.interior
        plus = np.where(inner, self.minus, self.plus)
        minus = np.where(inner, self.plus, self.minus)
        normal = np.where(inner[:, None], -self.normal, self.normal)
        endpoints = np.where(inner[:, None, None], self.endpoints[:, ::-1], self.endpoints)
        pairs = np.where(inner[:, None], self.vertex_pairs[:, ::-1], self.vertex_pairs)
        return EdgeSkeleton(
            vertex_pairs=pairs,
            endpoints=endpoints,
            length=self.length.copy(),
            normal=normal,
            plus=plus,
            minus=minus,
        )


@dataclass(frozen=True, eq=False)
class NestingMap:
    fine_level: int
    coarse_level: int
    parent: np.ndarray  # coarse triangle index per fine triangle

    def children(self, coarse_triangle):
        return np.flatnonzero(self.parent == coarse_triangle)


def build_skeleton(mesh):
    tris = mesh.triangles
    n_tri = tris.shape[0]
    # local edge k runs from vertex k to vertex k+1 (counterclockwise)
    heads = tris.reshape(-1)
    tails = np.roll(tris, -1, axis=1).reshape(-1)
    owner = np.repeat(np.arange(n_tri), 3)

    lo = np.minimum(heads, tails)
    hi = np.maximum(heads, tails)
    key = lo.astype(np.int64) * mesh.n_vertices + hi
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]

    starts = np.flatnonzero(np.r_[True, sorted_key[1:] != sorted_key[:-1]])
    counts = np.diff(np.r_[starts, sorted_key.size])
    if np.any(counts > 2):
        raise ValueError("Non-manifold mesh: an edge is shared by more than two triangles")

    first = order[starts]
    has_second = counts == 2
    second = np.full(starts.size, -1, dtype=np.int64)
    second[has_second] = order[starts[has_second] + 1]

    plus = owner[first]
    minus = np.where(has_second, owner[np.maximum(second, 0)], -1)

    a = mesh.vertices[heads[first]]
    b = mesh.vertices[tails[first]]
    tangent = b - a
    length = np.hypot(tangent[:, 0], tangent[:, 1])
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / length[:, None]

    return EdgeSkeleton(
        vertex_pairs=np.column_stack([heads[first], tails[first]]),
        endpoints=np.stack([a, b], axis=1),
        length=length,
        normal=normal,
        plus=plus,
        minus=minus,
    )


def build_structured(level):
    """
    Build the level-``level`` triangulation of [0,1]² and its skeleton.
    """
    if not isinstance(level, (int, np.integer)) or not MIN_LEVEL <= level <= MAX_LEVEL:
        raise ValueError(f"Mesh level must be an integer in [{MIN_LEVEL}, {MAX_LEVEL}], got {level!r}")
    level = int(level)

    n = 2 ** level
    h = 2.0 ** -level
    coords = np.arange(n + 1) * h
    X, Y = np.meshgrid(coords, coords)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    iy, ix = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (iy * (n + 1) + ix).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    mesh = TriMesh(level=level, h=h, vertices=vertices, triangles=triangles)
    skeleton = build_skeleton(mesh)
    logger.debug(
        f"Structured mesh level {level}: {mesh.n_triangles} triangles, "
        f"{skeleton.n_edges} edges ({int(skeleton.boundary.sum())} on the boundary)"
    )
    return mesh, skeleton


def build_nesting(fine, coarse):
    """Map every fine triangle to the coarse triangle that contains it."""
    if fine.level <= coarse.level:
        raise ValueError(
            f"Fine level {fine.level} must be strictly finer than coarse level {coarse.level}"
        )
    n_coarse = coarse.n_per_side
    scaled = fine.barycenters * n_coarse
    cell = np.clip(np.floor(scaled).astype(np.int64), 0, n_coarse - 1)
    local = scaled - cell
    square = cell[:, 1] * n_coarse + cell[:, 0]
    # below the diagonal of the square -> lower-right triangle (even index)
    upper = local[:, 1] > local[:, 0]
    parent = 2 * square + upper.astype(np.int64)
    return NestingMap(fine_level=fine.level, coarse_level=coarse.level, parent=parent)


def dump_mesh(mesh, path):
    """
    Write a plain-text listing of the mesh for debugging:

        level h n_vertices n_triangles
        v <index> <x> <y>          (one line per vertex)
        t <index> <a> <b> <c>      (one line per triangle, 0-based)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.level} {mesh.h!r} {mesh.n_vertices} {mesh.n_triangles}\n")
        for idx, (x, y) in enumerate(mesh.vertices):
            fh.write(f"v {idx} {x!r} {y!r}\n")
        for idx, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"t {idx} {a} {b} {c}\n")
    logger.info(f"Mesh level {mesh.level} dumped to {path}")
    return path
