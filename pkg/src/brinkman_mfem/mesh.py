"""Structured triangular meshes of rectangles with Gamma/Sigma boundary tags.

Local conventions used throughout the package: cell vertices are stored
counterclockwise, and local edge ``i`` of a cell is the edge opposite local
vertex ``i``, traversed counterclockwise, i.e. ``(1, 2)``, ``(2, 0)``,
``(0, 1)``.  Global edges are stored with ascending vertex indices.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])
BOUNDARY_TOL = 1e-12


class Tag(enum.IntEnum):
    INTERIOR = 0
    GAMMA = 1
    SIGMA = 2


class MeshError(ValueError):
    """Invalid mesh input."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation.

    Attributes
    ----------
    vertices : (V, 2) float array
    cells : (C, 3) int array, counterclockwise
    edges : (E, 2) int array, ``edges[:, 0] < edges[:, 1]``
    cell_edges : (C, 3) int array, global index of local edge ``i``
    cell_edge_signs : (C, 3) array of +1/-1, +1 when the local (counterclockwise)
        traversal agrees with the global lower-to-higher orientation
    edge_cells : (E, 2) int array, owning cells, ``-1`` in slot 1 on the boundary
    edge_tags : (E,) int array of :class:`Tag` values
    """

    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    cell_edge_signs: np.ndarray
    edge_cells: np.ndarray
    edge_tags: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(C, 2, 2) affine map Jacobians, columns ``x1 - x0`` and ``x2 - x0``."""
        x = self.vertices[self.cells]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)

    @cached_property
    def dets(self) -> np.ndarray:
        J = self.jacobians
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    @cached_property
    def inverse_jacobians(self) -> np.ndarray:
        J = self.jacobians
        d = self.dets
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / d
        inv[:, 1, 1] = J[:, 0, 0] / d
        inv[:, 0, 1] = -J[:, 0, 1] / d
        inv[:, 1, 0] = -J[:, 1, 0] / d
        return inv

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * self.dets

    @cached_property
    def diameters(self) -> np.ndarray:
        x = self.vertices[self.cells]
        lengths = np.linalg.norm(x[:, LOCAL_EDGES[:, 1]] - x[:, LOCAL_EDGES[:, 0]], axis=2)
        return lengths.max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    def map_points(self, ref_points: np.ndarray) -> np.ndarray:
        """Map reference points (n, 2) into every cell, giving (C, n, 2)."""
        x0 = self.vertices[self.cells[:, 0]]
        return x0[:, None, :] + np.einsum("cij,nj->cni", self.jacobians, ref_points)

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def edges_with_tag(self, tag: Tag) -> np.ndarray:
        return np.flatnonzero(self.edge_tags == int(tag))

    def check(self) -> None:
        """Raise :class:`MeshError` if any structural invariant is violated."""
        if np.any(self.dets <= 0):
            raise MeshError("cell with non-positive signed area")
        counts = np.bincount(self.cell_edges.ravel(), minlength=self.n_edges)
        if np.any((counts < 1) | (counts > 2)):
            raise MeshError("edge shared by more than two cells")
        if self.n_vertices - self.n_edges + self.n_cells != 1:
            raise MeshError("Euler relation V - E + C = 1 violated")
        btags = self.edge_tags[self.boundary_edges]
        if np.any((btags != Tag.GAMMA) & (btags != Tag.SIGMA)):
            raise MeshError("untagged boundary edge")
        if np.any(self.edge_tags[self.edge_cells[:, 1] >= 0] != Tag.INTERIOR):
            raise MeshError("tagged interior edge")


def mesh_stats(mesh: Mesh) -> dict:
    return {
        "vertices": mesh.n_vertices,
        "cells": mesh.n_cells,
        "edges": mesh.n_edges,
        "h": mesh.h,
        "area": float(mesh.areas.sum()),
    }


def _from_cells(vertices: np.ndarray, cells: np.ndarray) -> Mesh:
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    local = cells[:, LOCAL_EDGES]  # (C, 3, 2)
    lo = local.min(axis=2)
    hi = local.max(axis=2)
    pairs = np.stack([lo.ravel(), hi.ravel()], axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    cell_edges = inverse.reshape(-1, 3)
    signs = np.where(local[:, :, 0] < local[:, :, 1], 1.0, -1.0)

    edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
    flat_cells = np.repeat(np.arange(len(cells)), 3)
    # first owner: smallest cell index; second owner: largest
    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_edges[1:] != sorted_edges[:-1]
    edge_cells[sorted_edges[first], 0] = flat_cells[order[first]]
    edge_cells[sorted_edges[~first], 1] = flat_cells[order[~first]]

    return Mesh(
        vertices=vertices,
        cells=cells,
        edges=edges.astype(np.int64),
        cell_edges=cell_edges.astype(np.int64),
        cell_edge_signs=signs,
        edge_cells=edge_cells,
        edge_tags=np.zeros(len(edges), dtype=np.int64),
    )


def rect_sides_classifier(rect) -> Callable[[np.ndarray], np.ndarray]:
    """Edges on ``x = x0`` or ``y = y0`` are Gamma, the other two sides Sigma."""
    x0, x1, y0, y1 = rect
    scale = max(abs(x1 - x0), abs(y1 - y0))

    def classify(midpoints: np.ndarray) -> np.ndarray:
        mid = np.atleast_2d(midpoints)
        on_gamma = (np.abs(mid[:, 0] - x0) <= BOUNDARY_TOL * scale) | (
            np.abs(mid[:, 1] - y0) <= BOUNDARY_TOL * scale
        )
        return np.where(on_gamma, int(Tag.GAMMA), int(Tag.SIGMA))

    return classify


def tag_boundary(mesh: Mesh, classifier: Callable[[np.ndarray], np.ndarray]) -> Mesh:
    """Return a copy of ``mesh`` with boundary edges tagged by ``classifier``.

    ``classifier`` maps an (n, 2) array of edge midpoints to n tags, each
    ``Tag.GAMMA`` or ``Tag.SIGMA``.
    """
    bnd = mesh.boundary_edges
    tags = np.asarray(classifier(mesh.edge_midpoints()[bnd])).reshape(-1)
    if tags.shape != bnd.shape:
        raise MeshError("classifier must return one tag per boundary edge")
    if not np.all((tags == Tag.GAMMA) | (tags == Tag.SIGMA)):
        raise MeshError(f"invalid boundary tag(s): {sorted(set(tags.tolist()))}")
    edge_tags = np.zeros(mesh.n_edges, dtype=np.int64)
    edge_tags[bnd] = tags
    return replace(mesh, edge_tags=edge_tags)


def build_rect_mesh(nx: int, ny: int, rect=(0.0, 1.0, 0.0, 1.0), diagonal: str = "right",
                    classifier=None) -> Mesh:
    """Structured triangulation of ``[x0, x1] x [y0, y1]`` with nx*ny squares.

    ``diagonal="right"`` splits every square along the lower-left to upper-right
    diagonal (2 triangles); ``"crossed"`` adds the square centre and splits
    into 4 triangles.  Boundary edges are tagged with ``classifier`` (default:
    :func:`rect_sides_classifier`).
    """
    x0, x1, y0, y1 = (float(v) for v in rect)
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (x0 < x1 and y0 < y1):
        raise MeshError(f"invalid rectangle {rect}")
    if diagonal not in ("right", "crossed"):
        raise MeshError(f"unknown diagonal layout {diagonal!r}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    bl = j * (nx + 1) + i
    br = bl + 1
    tl = bl + nx + 1
    tr = tl + 1

    if diagonal == "right":
        cells = np.concatenate([
            np.column_stack([bl, br, tr]),
            np.column_stack([bl, tr, tl]),
        ])
    else:
        centres = np.column_stack([xs[i] + 0.5 * (x1 - x0) / nx, ys[j] + 0.5 * (y1 - y0) / ny])
        c = len(vertices) + np.arange(len(centres))
        vertices = np.vstack([vertices, centres])
        cells = np.concatenate([
            np.column_stack([bl, br, c]),
            np.column_stack([br, tr, c]),
            np.column_stack([tr, tl, c]),
            np.column_stack([tl, bl, c]),
        ])

    mesh = _from_cells(vertices, cells)
    return tag_boundary(mesh, classifier or rect_sides_classifier((x0, x1, y0, y1)))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle split into four similar children."""
    V = mesh.n_vertices
    mids = mesh.edge_midpoints()
    vertices = np.vstack([mesh.vertices, mids])
    c = mesh.cells
    m = V + mesh.cell_edges  # m[:, i] is the midpoint opposite vertex i
    cells = np.concatenate([
        np.column_stack([c[:, 0], m[:, 2], m[:, 1]]),
        np.column_stack([m[:, 2], c[:, 1], m[:, 0]]),
        np.column_stack([m[:, 1], m[:, 0], c[:, 2]]),
        np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
    ])
    fine = _from_cells(vertices, cells)

    # every fine boundary edge joins a coarse vertex to a coarse-edge midpoint
    bnd = fine.boundary_edges
    parent = fine.edges[bnd].max(axis=1) - V
    edge_tags = np.zeros(fine.n_edges, dtype=np.int64)
    edge_tags[bnd] = mesh.edge_tags[parent]
    return replace(fine, edge_tags=edge_tags)


def dump_mesh(mesh: Mesh) -> str:
    """Plain-text dump for debugging.

    Layout::

        <V> <C> <E>
        V lines:  x y
        C lines:  v0 v1 v2
        E lines:  a b tag     (tag: 0 interior, 1 Gamma, 2 Sigma)
    """
    lines = [f"{mesh.n_vertices} {mesh.n_cells} {mesh.n_edges}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [" ".join(str(v) for v in cell) for cell in mesh.cells]
    lines += [f"{a} {b} {t}" for (a, b), t in zip(mesh.edges, mesh.edge_tags)]
    return "\n".join(lines) + "\n"


def load_mesh(text: str) -> Mesh:
    rows = text.strip().splitlines()
    nv, nc, ne = (int(v) for v in rows[0].split())
    vertices = np.array([[float(v) for v in r.split()] for r in rows[1:1 + nv]])
    cells = np.array([[int(v) for v in r.split()] for r in rows[1 + nv:1 + nv + nc]])
    mesh = _from_cells(vertices, cells)
    edge_rows = np.array([[int(v) for v in r.split()] for r in rows[1 + nv + nc:1 + nv + nc + ne]])
    if len(edge_rows) != mesh.n_edges or not np.array_equal(edge_rows[:, :2], mesh.edges):
        raise MeshError("edge table does not match cells")
    return replace(mesh, edge_tags=edge_rows[:, 2].copy())
