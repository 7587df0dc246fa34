"""Structured quadrilateral mesh of the rectangular design domain.

The domain [0, nelx] x [0, nely] is discretized with unit square bilinear
elements. Nodes are numbered column-wise, top to bottom within a column and
columns left to right; elements follow the same column-wise ordering. All
indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class StructuredGrid:
    """Regular grid of unit square elements.

    Attributes
    ----------
    nelx, nely : int
        Element counts in the horizontal and vertical directions.
    coords : ndarray, shape (n_nodes, 2)
        Integer lattice (x, y) position of each node. Kept integral so
        node-selection predicates are exact.
    connect : ndarray, shape (n_elems, 4)
        Node indices of each element, anticlockwise starting at the
        left-bottom corner: (lb, rb, rt, lt).
    h_e : float
        Element edge length, fixed at 1.
    """

    nelx: int
    nely: int
    coords: np.ndarray
    connect: np.ndarray
    h_e: float = 1.0

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def n_elems(self) -> int:
        return self.nelx * self.nely


def build_grid(nelx: int, nely: int) -> StructuredGrid:
    """Build the structured grid for an nelx x nely element domain.

    Node k of column c (k counted from the top of the column) has index
    c*(nely+1) + k and sits at (x, y) = (c, nely - k).
    """
    if nelx < 1 or nely < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {nelx}x{nely}")
    ny = nely + 1
    ids = np.arange((nelx + 1) * ny)
    coords = np.column_stack([ids // ny, nely - ids % ny]).astype(np.int64)
    # left-bottom node of each element; elements run top to bottom per column
    elem_col = np.repeat(np.arange(nelx), nely)
    elem_row = np.tile(np.arange(nely), nelx)
    lb = elem_col * ny + elem_row + 1
    connect = np.column_stack([lb, lb + ny, lb + nely, lb - 1]).astype(np.int64)
    return StructuredGrid(nelx=nelx, nely=nely, coords=coords, connect=connect)


@dataclass
class DofTable:
    """Per-element global DOF indices.

    rows[e] lists the 4*n_unkn DOFs of element e, interleaved per node in
    connectivity order. Node k owns DOFs n_unkn*k .. n_unkn*k + n_unkn - 1.
    """

    n_unkn: int
    rows: np.ndarray
    n_dofs: int

    # scatter index pairs reused across assemblies; the sparsity pattern of
    # the global matrix never changes, only the values do
    @cached_property
    def scatter_rows(self) -> np.ndarray:
        w = self.rows.shape[1]
        return np.repeat(self.rows, w, axis=1).ravel()

    @cached_property
    def scatter_cols(self) -> np.ndarray:
        w = self.rows.shape[1]
        return np.tile(self.rows, (1, w)).ravel()


def dof_table(grid: StructuredGrid, n_unkn: int) -> DofTable:
    """Expand the element connectivity into global DOF rows."""
    if n_unkn not in (1, 2):
        raise ValueError(f"n_unkn must be 1 or 2, got {n_unkn}")
    conn = grid.connect
    rows = (n_unkn * conn[:, :, None] + np.arange(n_unkn)).reshape(
        conn.shape[0], 4 * n_unkn
    )
    return DofTable(n_unkn=n_unkn, rows=rows, n_dofs=n_unkn * grid.n_nodes)


def select_nodes(grid: StructuredGrid, predicate) -> np.ndarray:
    """Node indices whose lattice coordinates satisfy ``predicate(x, y)``.

    The predicate is called once with the full coordinate arrays and should
    return a boolean mask; a scalar-only callable is evaluated per node as a
    fallback. Indices come back in ascending order.
    """
    x = grid.coords[:, 0]
    y = grid.coords[:, 1]
    try:
        mask = np.asarray(predicate(x, y))
        if mask.shape != x.shape:
            raise ValueError
    except (ValueError, TypeError):
        mask = np.fromiter(
            (bool(predicate(int(xi), int(yi))) for xi, yi in grid.coords),
            dtype=bool,
            count=grid.n_nodes,
        )
    return np.flatnonzero(mask)
