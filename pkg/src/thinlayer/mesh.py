"""Cell/edge geometry for structured finite-volume meshes.

The builders produce uniform 1D intervals and 2D rectangles, but all
downstream assembly consumes only the generic cell/edge view (areas,
edge lengths, outward unit normals, neighbor sets), so irregular meshes
can be loaded from file later without touching the solvers.  1D meshes
additionally carry the node-based dual mesh used by the
finite-volume-element backend: node i owns the midpoint-to-midpoint
interval around it, with half-width cells at the two domain ends.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class InvalidGeometryError(ValueError):
    """Mesh construction rejected: bad cell counts or empty ranges."""


@dataclass(frozen=True)
class Mesh:
    """Immutable cell/edge geometry.

    Interior edges are stored once, oriented from ``edge_cells[e, 0]``
    toward ``edge_cells[e, 1]``; the reverse orientation is derived by
    negating the stored normal, so paired normals are exact negations.
    In 1D the edge "length" is 1 so the flux-difference update needs no
    special casing.
    """

    dimension: int
    cell_centroids: np.ndarray   # (n_cells, d)
    cell_areas: np.ndarray       # (n_cells,)  lengths in 1D
    edge_cells: np.ndarray       # (n_edges, 2) int
    edge_lengths: np.ndarray     # (n_edges,)
    edge_normals: np.ndarray     # (n_edges, d) unit, outward from edge_cells[:, 0]
    edge_midpoints: np.ndarray   # (n_edges, d)
    edge_distances: np.ndarray   # (n_edges,)  centroid-to-centroid
    boundary_cell: np.ndarray    # (n_cells,) bool
    shape: tuple[int, ...] | None = None   # (nx, ny) for rectangles
    # dual mesh (1D only): node i owns [x_i - h/2, x_i + h/2] clipped to the domain
    node_x: np.ndarray | None = None         # (n_cells + 1,)
    dual_widths: np.ndarray | None = None    # (n_cells + 1,)
    dual_midpoints: np.ndarray | None = None  # (n_cells + 1,)

    def __post_init__(self):
        for arr in (self.cell_centroids, self.cell_areas, self.edge_cells,
                    self.edge_lengths, self.edge_normals, self.edge_midpoints,
                    self.edge_distances, self.boundary_cell,
                    self.node_x, self.dual_widths, self.dual_midpoints):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return self.cell_areas.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_cells.shape[0]

    @property
    def domain_volume(self) -> float:
        return float(np.sum(self.cell_areas))

    @property
    def has_dual(self) -> bool:
        return self.node_x is not None

    @property
    def n_nodes(self) -> int:
        if not self.has_dual:
            raise InvalidGeometryError("mesh carries no dual (node) mesh")
        return self.node_x.shape[0]

    @cached_property
    def _cell_edges(self) -> list[list[tuple[int, int]]]:
        # per cell: (edge index, +1 if the cell is the stored j side else -1)
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n_cells)]
        for e, (j, k) in enumerate(self.edge_cells):
            adj[j].append((e, +1))
            adj[k].append((e, -1))
        return adj

    def neighbors(self, j: int):
        """Edge set of cell j: list of (k, length, outward unit normal)."""
        if not 0 <= j < self.n_cells:
            raise KeyError(f"unknown cell id {j}")
        out = []
        for e, sign in self._cell_edges[j]:
            a, b = self.edge_cells[e]
            if sign > 0:
                out.append((int(b), float(self.edge_lengths[e]), self.edge_normals[e]))
            else:
                out.append((int(a), float(self.edge_lengths[e]), -self.edge_normals[e]))
        return out

    def dump(self, path) -> None:
        """Plain-text dump: one line per cell (id, centroid, area) and per
        edge (j, k, length, normal components)."""
        with open(path, "w") as fh:
            fh.write(f"# mesh dimension={self.dimension} "
                     f"cells={self.n_cells} edges={self.n_edges}\n")
            for j in range(self.n_cells):
                c = " ".join(f"{v:.17g}" for v in self.cell_centroids[j])
                fh.write(f"cell {j} {c} {self.cell_areas[j]:.17g}\n")
            for e in range(self.n_edges):
                j, k = self.edge_cells[e]
                n = " ".join(f"{v:.17g}" for v in self.edge_normals[e])
                fh.write(f"edge {j} {k} {self.edge_lengths[e]:.17g} {n}\n")


def edge_neighbors(mesh: Mesh, j: int):
    """Neighbor set of cell j with edge geometry, oriented outward."""
    return mesh.neighbors(j)


def build_interval_mesh(a: float, b: float, n: int) -> Mesh:
    """Uniform 1D mesh of n cells on (a, b), with the node/dual mesh."""
    if n < 1:
        raise InvalidGeometryError(f"cell count must be >= 1, got {n}")
    if not b > a:
        raise InvalidGeometryError(f"empty interval ({a}, {b})")
    h = (b - a) / n
    centroids = (a + (np.arange(n) + 0.5) * h)[:, None]
    areas = np.full(n, h)

    m = n - 1
    edge_cells = np.column_stack([np.arange(m), np.arange(1, n)]).astype(np.int64)
    edge_lengths = np.ones(m)
    edge_normals = np.ones((m, 1))
    edge_midpoints = (a + np.arange(1, n) * h)[:, None]
    edge_distances = np.full(m, h)

    boundary = np.zeros(n, dtype=bool)
    boundary[0] = boundary[-1] = True

    node_x = a + np.arange(n + 1) * h
    node_x[-1] = b
    dual_w = np.full(n + 1, h)
    dual_w[0] = dual_w[-1] = 0.5 * h
    dual_mid = node_x.copy()
    dual_mid[0] = a + 0.25 * h
    dual_mid[-1] = b - 0.25 * h

    return Mesh(dimension=1, cell_centroids=centroids, cell_areas=areas,
                edge_cells=edge_cells, edge_lengths=edge_lengths,
                edge_normals=edge_normals, edge_midpoints=edge_midpoints,
                edge_distances=edge_distances, boundary_cell=boundary,
                shape=(n,), node_x=node_x, dual_widths=dual_w,
                dual_midpoints=dual_mid)


def build_rect_mesh(x_range, y_range, nx: int, ny: int) -> Mesh:
    """Uniform nx-by-ny rectangle mesh with 4-neighbor edge sets."""
    x0, x1 = x_range
    y0, y1 = y_range
    if nx < 1 or ny < 1:
        raise InvalidGeometryError(f"cell counts must be >= 1, got {nx}x{ny}")
    if not (x1 > x0 and y1 > y0):
        raise InvalidGeometryError(f"empty ranges ({x0},{x1}) x ({y0},{y1})")
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ix = ix.ravel()
    iy = iy.ravel()  # cell id j = ix + nx*iy
    centroids = np.column_stack([x0 + (ix + 0.5) * hx, y0 + (iy + 0.5) * hy])
    areas = np.full(nx * ny, hx * hy)

    ecells, elen, enorm, emid, edist = [], [], [], [], []
    # vertical interfaces between (ix, iy) and (ix+1, iy)
    for iyv in range(ny):
        for ixv in range(nx - 1):
            j = ixv + nx * iyv
            ecells.append((j, j + 1))
            elen.append(hy)
            enorm.append((1.0, 0.0))
            emid.append((x0 + (ixv + 1) * hx, y0 + (iyv + 0.5) * hy))
            edist.append(hx)
    # horizontal interfaces between (ix, iy) and (ix, iy+1)
    for iyv in range(ny - 1):
        for ixv in range(nx):
            j = ixv + nx * iyv
            ecells.append((j, j + nx))
            elen.append(hx)
            enorm.append((0.0, 1.0))
            emid.append((x0 + (ixv + 0.5) * hx, y0 + (iyv + 1) * hy))
            edist.append(hy)

    boundary = (ix == 0) | (ix == nx - 1) | (iy == 0) | (iy == ny - 1)

    n_e = len(ecells)
    return Mesh(dimension=2, cell_centroids=centroids, cell_areas=areas,
                edge_cells=np.asarray(ecells, dtype=np.int64).reshape(n_e, 2),
                edge_lengths=np.asarray(elen),
                edge_normals=np.asarray(enorm).reshape(n_e, 2),
                edge_midpoints=np.asarray(emid).reshape(n_e, 2),
                edge_distances=np.asarray(edist),
                boundary_cell=boundary, shape=(nx, ny))


def cell_gradients(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Cell-centered gradient of per-cell values, (n_cells, d).

    Central differences in the interior, one-sided at the boundary;
    used by nonlocal-flux quadrature, not by two-point edge fluxes.
    """
    values = np.asarray(values, dtype=float)
    if mesh.dimension == 1:
        g = np.gradient(values, mesh.cell_centroids[:, 0])
        return g[:, None]
    nx, ny = mesh.shape
    U = values.reshape(ny, nx)
    xs = mesh.cell_centroids[:nx, 0]
    ys = mesh.cell_centroids[::nx, 1]
    gy, gx = np.gradient(U, ys, xs)
    return np.column_stack([gx.ravel(), gy.ravel()])


def dual_p1_integrals(mesh: Mesh, nodal_values: np.ndarray) -> np.ndarray:
    """Exact integrals of the piecewise-linear nodal field over each dual
    cell; summing the vector gives the exact integral over the domain."""
    if not mesh.has_dual:
        raise InvalidGeometryError("mesh carries no dual (node) mesh")
    u = np.asarray(nodal_values, dtype=float)
    if u.shape[0] != mesh.n_nodes:
        raise InvalidGeometryError(
            f"expected {mesh.n_nodes} nodal values, got {u.shape[0]}")
    h = np.diff(mesh.node_x)          # element widths
    out = np.zeros(mesh.n_nodes)
    # right half of node i over element i, left half of node i+1
    out[:-1] += h * (3.0 * u[:-1] + u[1:]) / 8.0
    out[1:] += h * (u[:-1] + 3.0 * u[1:]) / 8.0
    return out


def solution_points(mesh: Mesh, backend: str) -> np.ndarray:
    """Coordinates carrying the unknowns: cell centroids (fv) or nodes (fve)."""
    if backend == "fv":
        return mesh.cell_centroids
    if backend == "fve":
        if not mesh.has_dual:
            raise InvalidGeometryError("fve backend needs a mesh with a dual")
        return mesh.node_x[:, None]
    raise ValueError(f"unknown backend {backend!r}")


def quadrature_points(mesh: Mesh, backend: str) -> np.ndarray:
    """Source-evaluation points: cell centroids (fv) or dual-cell midpoints."""
    if backend == "fv":
        return mesh.cell_centroids
    if backend == "fve":
        if not mesh.has_dual:
            raise InvalidGeometryError("fve backend needs a mesh with a dual")
        return mesh.dual_midpoints[:, None]
    raise ValueError(f"unknown backend {backend!r}")


def point_weights(mesh: Mesh, backend: str) -> np.ndarray:
    """Quadrature weights: cell areas (fv) or dual-cell widths (fve)."""
    if backend == "fv":
        return mesh.cell_areas
    if backend == "fve":
        if not mesh.has_dual:
            raise InvalidGeometryError("fve backend needs a mesh with a dual")
        return mesh.dual_widths
    raise ValueError(f"unknown backend {backend!r}")
