"""Nested coarse/fine rectangular grids on the unit square.

Indexing is row-major everywhere: fine node ``(ix, iy)`` has id
``iy * (fine_nx + 1) + ix``, fine cell ``(cx, cy)`` has id ``cy * fine_nx + cx``,
and coarse cells and coarse vertices follow the same rule on the coarse grid.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class GridHierarchy:
    coarse_nx: int
    coarse_ny: int
    fine_per_coarse: int

    def __post_init__(self):
        for name in ("coarse_nx", "coarse_ny", "fine_per_coarse"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def fine_nx(self):
        return self.coarse_nx * self.fine_per_coarse

    @property
    def fine_ny(self):
        return self.coarse_ny * self.fine_per_coarse

    @property
    def Hx(self):
        return 1.0 / self.coarse_nx

    @property
    def Hy(self):
        return 1.0 / self.coarse_ny

    @property
    def H(self):
        return max(self.Hx, self.Hy)

    @property
    def hx(self):
        return 1.0 / self.fine_nx

    @property
    def hy(self):
        return 1.0 / self.fine_ny

    @property
    def h(self):
        return max(self.hx, self.hy)

    @property
    def num_coarse_cells(self):
        return self.coarse_nx * self.coarse_ny

    @property
    def num_coarse_vertices(self):
        return (self.coarse_nx + 1) * (self.coarse_ny + 1)

    @property
    def num_fine_cells(self):
        return self.fine_nx * self.fine_ny

    @property
    def num_fine_nodes(self):
        return (self.fine_nx + 1) * (self.fine_ny + 1)

    def node_id(self, ix, iy):
        return np.asarray(iy) * (self.fine_nx + 1) + np.asarray(ix)

    def cell_id(self, cx, cy):
        return np.asarray(cy) * self.fine_nx + np.asarray(cx)

    @cached_property
    def node_coords(self):
        """(num_fine_nodes, 2) array of node coordinates."""
        x = np.arange(self.fine_nx + 1) * self.hx
        y = np.arange(self.fine_ny + 1) * self.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cell_centers(self):
        x = (np.arange(self.fine_nx) + 0.5) * self.hx
        y = (np.arange(self.fine_ny) + 0.5) * self.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def boundary_mask(self):
        """Boolean mask of fine nodes on the domain boundary."""
        ix = np.arange(self.num_fine_nodes) % (self.fine_nx + 1)
        iy = np.arange(self.num_fine_nodes) // (self.fine_nx + 1)
        return (ix == 0) | (ix == self.fine_nx) | (iy == 0) | (iy == self.fine_ny)

    @cached_property
    def interior_nodes(self):
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def interior_index(self):
        """Map global node id -> position among interior nodes (-1 on the boundary)."""
        idx = np.full(self.num_fine_nodes, -1, dtype=np.int64)
        idx[self.interior_nodes] = np.arange(self.interior_nodes.size)
        return idx

    def whole(self):
        return Region(self, 0, self.coarse_nx, 0, self.coarse_ny)


def build_hierarchy(coarse_nx, coarse_ny, fine_per_coarse):
    return GridHierarchy(coarse_nx, coarse_ny, fine_per_coarse)


@dataclass(frozen=True)
class Region:
    """A rectangular block of whole coarse cells ``[x0, x1) x [y0, y1)``."""

    grid: GridHierarchy
    x0: int
    x1: int
    y0: int
    y1: int

    def __post_init__(self):
        g = self.grid
        if not (0 <= self.x0 < self.x1 <= g.coarse_nx and 0 <= self.y0 < self.y1 <= g.coarse_ny):
            raise ValueError(f"invalid region box {(self.x0, self.x1, self.y0, self.y1)}")

    @property
    def shape(self):
        """Coarse cells per axis (nx, ny)."""
        return self.x1 - self.x0, self.y1 - self.y0

    @property
    def fine_shape(self):
        p = self.grid.fine_per_coarse
        return (self.x1 - self.x0) * p, (self.y1 - self.y0) * p

    @property
    def node_shape(self):
        fx, fy = self.fine_shape
        return fx + 1, fy + 1

    @cached_property
    def coarse_cells(self):
        cx, cy = np.meshgrid(np.arange(self.x0, self.x1), np.arange(self.y0, self.y1))
        return (cy * self.grid.coarse_nx + cx).ravel()

    @cached_property
    def fine_cells(self):
        p = self.grid.fine_per_coarse
        cx, cy = np.meshgrid(np.arange(self.x0 * p, self.x1 * p), np.arange(self.y0 * p, self.y1 * p))
        return self.grid.cell_id(cx, cy).ravel()

    @cached_property
    def nodes(self):
        """Global ids of all fine nodes in the closed region, row-major."""
        p = self.grid.fine_per_coarse
        ix, iy = np.meshgrid(np.arange(self.x0 * p, self.x1 * p + 1), np.arange(self.y0 * p, self.y1 * p + 1))
        return self.grid.node_id(ix, iy).ravel()

    @cached_property
    def interior_local(self):
        """Positions (into ``nodes``) of nodes strictly inside the region."""
        nx, ny = self.node_shape
        ix = np.arange(nx * ny) % nx
        iy = np.arange(nx * ny) // nx
        return np.flatnonzero((ix > 0) & (ix < nx - 1) & (iy > 0) & (iy < ny - 1))

    @cached_property
    def interior_nodes(self):
        return self.nodes[self.interior_local]

    @cached_property
    def interior_index(self):
        """Map global node id -> position among this region's interior nodes (-1 elsewhere)."""
        idx = np.full(self.grid.num_fine_nodes, -1, dtype=np.int64)
        idx[self.interior_nodes] = np.arange(self.interior_nodes.size)
        return idx

    def contains(self, other):
        return self.x0 <= other.x0 and other.x1 <= self.x1 and self.y0 <= other.y0 and other.y1 <= self.y1

    def touches_boundary(self):
        g = self.grid
        return self.x0 == 0 or self.y0 == 0 or self.x1 == g.coarse_nx or self.y1 == g.coarse_ny


def coarse_element_region(g, i):
    if not 0 <= i < g.num_coarse_cells:
        raise IndexError(f"coarse element {i} out of range [0, {g.num_coarse_cells})")
    cx, cy = i % g.coarse_nx, i // g.coarse_nx
    return Region(g, cx, cx + 1, cy, cy + 1)


def vertex_neighborhood(g, i):
    """Union of the (1, 2 or 4) coarse cells sharing coarse vertex ``i``."""
    if not 0 <= i < g.num_coarse_vertices:
        raise IndexError(f"coarse vertex {i} out of range [0, {g.num_coarse_vertices})")
    vx, vy = i % (g.coarse_nx + 1), i // (g.coarse_nx + 1)
    return Region(g, max(vx - 1, 0), min(vx + 1, g.coarse_nx), max(vy - 1, 0), min(vy + 1, g.coarse_ny))


def oversample(g, r, layers):
    if layers < 0:
        raise ValueError("layers must be >= 0")
    return Region(
        g,
        max(r.x0 - layers, 0),
        min(r.x1 + layers, g.coarse_nx),
        max(r.y0 - layers, 0),
        min(r.y1 + layers, g.coarse_ny),
    )


def vertex_coords(g, i):
    vx, vy = i % (g.coarse_nx + 1), i // (g.coarse_nx + 1)
    return vx * g.Hx, vy * g.Hy
