"""Conforming triangular meshes with facet topology and boundary tags."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

SIDES = ("left", "right", "bottom", "top")


class MeshError(ValueError):
    """Raised for malformed or nonconforming meshes."""


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 2)
    cells: np.ndarray  # (T, 3), counterclockwise
    domain_box: tuple[float, float, float, float]  # (xmin, xmax, ymin, ymax)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def cell_coords(self) -> np.ndarray:
        """Vertex coordinates per cell, shape (T, 3, 2)."""
        return self.vertices[self.cells]

    def areas(self) -> np.ndarray:
        return 0.5 * _signed_double_area(self.cell_coords())

    def diameters(self) -> np.ndarray:
        xy = self.cell_coords()
        e = np.stack([xy[:, 2] - xy[:, 1], xy[:, 0] - xy[:, 2], xy[:, 1] - xy[:, 0]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    def inradii(self) -> np.ndarray:
        xy = self.cell_coords()
        e = np.stack([xy[:, 2] - xy[:, 1], xy[:, 0] - xy[:, 2], xy[:, 1] - xy[:, 0]], axis=1)
        perimeter = np.linalg.norm(e, axis=2).sum(axis=1)
        return 2.0 * self.areas() / perimeter

    @property
    def h(self) -> float:
        """Largest cell diameter."""
        return float(self.diameters().max())

    def barycentric_gradients(self) -> np.ndarray:
        """Constant gradients of the three barycentric coordinates, shape (T, 3, 2)."""
        xy = self.cell_coords()
        two_area = _signed_double_area(xy)
        grads = np.empty((self.n_cells, 3, 2))
        for i in range(3):
            a = xy[:, (i + 1) % 3]
            b = xy[:, (i + 2) % 3]
            # inward normal of the opposite edge scaled by its length
            grads[:, i, 0] = (a[:, 1] - b[:, 1]) / two_area
            grads[:, i, 1] = (b[:, 0] - a[:, 0]) / two_area
        return grads

    def barycentric(self, cell: int, x: Sequence[float]) -> np.ndarray:
        xy = self.vertices[self.cells[cell]]
        T = np.column_stack([xy[0] - xy[2], xy[1] - xy[2]])
        l01 = np.linalg.solve(T, np.asarray(x, dtype=float) - xy[2])
        return np.array([l01[0], l01[1], 1.0 - l01.sum()])

    def map_points(self, bary: np.ndarray) -> np.ndarray:
        """Map barycentric points (nq, 3) or (T, nq, 3) to physical coordinates (T, nq, 2)."""
        xy = self.cell_coords()
        if bary.ndim == 2:
            return np.einsum("qi,tid->tqd", bary, xy)
        return np.einsum("tqi,tid->tqd", bary, xy)


@dataclass(frozen=True)
class FacetTopology:
    facets: np.ndarray  # (E, 2) sorted vertex pairs, lexicographic order
    left: np.ndarray  # (E,) lower-index adjacent cell
    right: np.ndarray  # (E,) higher-index adjacent cell, -1 on the boundary
    normals: np.ndarray  # (E, 2) left -> right, outward on the boundary
    lengths: np.ndarray  # (E,)
    tags: np.ndarray  # (E,) INTERIOR, DIRICHLET or NEUMANN
    sides: tuple  # per facet: box side name or None
    cell_facets: np.ndarray  # (T, 3) local facet i is opposite local vertex i
    local_index: np.ndarray  # (E, 2) local facet index in left / right cell

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.tags == INTERIOR)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.tags != INTERIOR)

    @property
    def dirichlet(self) -> np.ndarray:
        return np.flatnonzero(self.tags == DIRICHLET)

    @property
    def neumann(self) -> np.ndarray:
        return np.flatnonzero(self.tags == NEUMANN)

    def midpoints(self, mesh: Mesh) -> np.ndarray:
        return 0.5 * (mesh.vertices[self.facets[:, 0]] + mesh.vertices[self.facets[:, 1]])


def _signed_double_area(xy: np.ndarray) -> np.ndarray:
    return (xy[:, 1, 0] - xy[:, 0, 0]) * (xy[:, 2, 1] - xy[:, 0, 1]) - (
        xy[:, 2, 0] - xy[:, 0, 0]
    ) * (xy[:, 1, 1] - xy[:, 0, 1])


def _box_of(vertices: np.ndarray) -> tuple[float, float, float, float]:
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def generate_structured_mesh(
    nx: int, ny: int, box: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)
) -> Mesh:
    """Split an ``nx`` by ``ny`` grid of rectangles along their SW-NE diagonals."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"subdivision counts must be positive integers, got nx={nx}, ny={ny}")
    xmin, xmax, ymin, ymax = map(float, box)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"degenerate box {box}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(xmin, xmax, nx + 1)
    ys = np.linspace(ymin, ymax, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    sw = (j * (nx + 1) + i).ravel()
    se = sw + 1
    nw = sw + nx + 1
    ne = nw + 1
    lower = np.column_stack([sw, se, ne])
    upper = np.column_stack([sw, ne, nw])
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper
    return Mesh(vertices, cells, (xmin, xmax, ymin, ymax))


def structured_nx_for_h(h_target: float, box=(-1.0, 1.0, -1.0, 1.0)) -> int:
    """Smallest ``nx`` (with ``ny = nx``) whose cell diagonal does not exceed ``h_target``."""
    lx = box[1] - box[0]
    ly = box[3] - box[2]
    return int(math.ceil(math.hypot(lx, ly) / h_target - 1e-12))


def _check_conforming(vertices: np.ndarray, cells: np.ndarray) -> None:
    edges = np.sort(cells[:, [[1, 2], [2, 0], [0, 1]]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("an edge is shared by more than two cells")
    single = uniq[counts == 1]
    # hanging nodes show up as a vertex lying inside an edge that only one cell sees
    a = vertices[single[:, 0]]
    b = vertices[single[:, 1]]
    d = b - a
    L2 = (d**2).sum(axis=1)
    for v in range(vertices.shape[0]):
        w = vertices[v] - a
        t = (w * d).sum(axis=1) / L2
        cross = np.abs(w[:, 0] * d[:, 1] - w[:, 1] * d[:, 0]) / np.sqrt(L2)
        hit = (t > 1e-10) & (t < 1 - 1e-10) & (cross < 1e-10 * np.sqrt(L2))
        if np.any(hit):
            e = single[np.argmax(hit)]
            raise MeshError(f"hanging vertex {v} on edge ({e[0]}, {e[1]})")


def make_mesh(vertices, cells, domain_box=None) -> Mesh:
    """Validate arrays, repair clockwise cells, and return a :class:`Mesh`."""
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
    cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
    V = vertices.shape[0]
    if cells.size and (cells.min() < 0 or cells.max() >= V):
        bad = int(cells.max()) if cells.max() >= V else int(cells.min())
        raise IndexError(f"cell references vertex {bad}, but only {V} vertices exist")
    area2 = _signed_double_area(vertices[cells])
    scale = np.ptp(vertices, axis=0).max() ** 2 if V else 1.0
    if np.any(np.abs(area2) <= 1e-14 * scale):
        raise MeshError(f"degenerate cell {int(np.argmax(np.abs(area2) <= 1e-14 * scale))}")
    cw = area2 < 0
    if np.any(cw):
        warnings.warn(f"reoriented {int(cw.sum())} clockwise cell(s)", stacklevel=2)
        cells[cw] = cells[cw][:, [0, 2, 1]]
    _check_conforming(vertices, cells)
    box = _box_of(vertices) if domain_box is None else tuple(map(float, domain_box))
    return Mesh(vertices, cells, box)


def perturb_mesh(mesh: Mesh, amount: float, seed: int = 0) -> Mesh:
    """Move interior vertices by up to ``amount`` times the local grid spacing.

    Breaks the point symmetries of structured meshes, which can make particular
    manufactured solutions exact by accident. ``amount < 0.25`` keeps every cell
    positively oriented on structured meshes.
    """
    if not 0.0 <= amount < 0.25:
        raise ValueError(f"perturbation must lie in [0, 0.25), got {amount}")
    xmin, xmax, ymin, ymax = mesh.domain_box
    v = mesh.vertices.copy()
    tol = 1e-12 * max(xmax - xmin, ymax - ymin)
    inner = ((v[:, 0] > xmin + tol) & (v[:, 0] < xmax - tol)
             & (v[:, 1] > ymin + tol) & (v[:, 1] < ymax - tol))
    edges = mesh.cells[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
    spacing = np.full(len(v), np.inf)
    np.minimum.at(spacing, edges.ravel(), np.repeat(np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1), 2))
    # the shortest incident edge bounds the axis-aligned spacing from below
    step = amount * spacing[inner, None] / np.sqrt(2.0)
    v[inner] += np.random.default_rng(seed).uniform(-1.0, 1.0, (int(inner.sum()), 2)) * step
    return make_mesh(v, mesh.cells, mesh.domain_box)


def load_mesh(text: str) -> Mesh:
    """Parse the plain-text mesh format (``vertices N`` block, then ``cells M`` block)."""
    tokens: list[list[str]] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.append(line.split())
    try:
        it = iter(tokens)
        head = next(it)
        if head[0] != "vertices" or len(head) != 2:
            raise MeshError(f"expected 'vertices N', got {' '.join(head)!r}")
        nv = int(head[1])
        vertices = [[float(a) for a in next(it)] for _ in range(nv)]
        head = next(it)
        if head[0] != "cells" or len(head) != 2:
            raise MeshError(f"expected 'cells M', got {' '.join(head)!r}")
        nc = int(head[1])
        cells = [[int(a) for a in next(it)] for _ in range(nc)]
    except StopIteration:
        raise MeshError("unexpected end of mesh file") from None
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"parse error: {exc}") from None
    if any(len(v) != 2 for v in vertices) or any(len(c) != 3 for c in cells):
        raise MeshError("vertex lines need 2 numbers and cell lines 3 indices")
    if next(it, None) is not None:
        raise MeshError("trailing content after cell block")
    return make_mesh(vertices, cells)


def dump_mesh(mesh: Mesh) -> str:
    lines = [f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"cells {mesh.n_cells}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    return "\n".join(lines) + "\n"


def box_side(mesh: Mesh, point: np.ndarray, tol: float = 1e-10) -> str | None:
    xmin, xmax, ymin, ymax = mesh.domain_box
    scale = max(xmax - xmin, ymax - ymin)
    x, y = point
    if abs(x - xmin) <= tol * scale:
        return "left"
    if abs(x - xmax) <= tol * scale:
        return "right"
    if abs(y - ymin) <= tol * scale:
        return "bottom"
    if abs(y - ymax) <= tol * scale:
        return "top"
    return None


TagRule = Callable[[np.ndarray, "str | None"], int]


def all_neumann(midpoint, side) -> int:
    return NEUMANN


def all_dirichlet(midpoint, side) -> int:
    return DIRICHLET


def dirichlet_on(*sides: str) -> TagRule:
    """Tag rule: Dirichlet on the named box sides, Neumann elsewhere."""
    unknown = set(sides) - set(SIDES)
    if unknown:
        raise ValueError(f"unknown sides {sorted(unknown)}")

    def rule(midpoint, side):
        return DIRICHLET if side in sides else NEUMANN

    return rule


def build_facets(mesh: Mesh, tag_rule: TagRule = all_neumann) -> FacetTopology:
    T = mesh.n_cells
    local = np.array([[1, 2], [2, 0], [0, 1]])
    pairs = mesh.cells[:, local].reshape(-1, 2)  # row 3*t + i: facet opposite vertex i
    spairs = np.sort(pairs, axis=1)
    facets, inverse = np.unique(spairs, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    E = facets.shape[0]
    cell_facets = inverse.reshape(T, 3)

    left = np.full(E, -1, dtype=np.int64)
    right = np.full(E, -1, dtype=np.int64)
    local_index = np.full((E, 2), -1, dtype=np.int64)
    # rows in increasing (cell, local) order so the first visitor is the lower cell
    for row in range(3 * T):
        e = inverse[row]
        t, i = divmod(row, 3)
        if left[e] < 0:
            left[e] = t
            local_index[e, 0] = i
        elif right[e] < 0:
            right[e] = t
            local_index[e, 1] = i
        else:
            raise MeshError(f"facet {tuple(facets[e])} has more than two cells")

    xy = mesh.vertices
    # outward normal of the left cell's edge (a -> b counterclockwise)
    a = xy[pairs[3 * left + local_index[:, 0], 0]]
    b = xy[pairs[3 * left + local_index[:, 0], 1]]
    d = b - a
    lengths = np.linalg.norm(d, axis=1)
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]

    mids = 0.5 * (xy[facets[:, 0]] + xy[facets[:, 1]])
    tags = np.zeros(E, dtype=np.int64)
    sides = []
    for e in range(E):
        side = box_side(mesh, mids[e]) if right[e] < 0 else None
        sides.append(side)
        if right[e] < 0:
            tag = tag_rule(mids[e], side)
            if tag not in (DIRICHLET, NEUMANN):
                raise ValueError(f"tag rule returned {tag!r} for boundary facet {e}")
            tags[e] = tag
    for arr in (facets, left, right, normals, lengths, tags, cell_facets, local_index):
        arr.setflags(write=False)
    return FacetTopology(
        facets, left, right, normals, lengths, tags, tuple(sides), cell_facets, local_index
    )


def shape_regularity(mesh: Mesh) -> float:
    """Largest ratio of cell diameter to inradius."""
    r = mesh.inradii()
    if np.any(r <= 0):
        raise MeshError("degenerate cell")
    return float((mesh.diameters() / r).max())


def refine_sequence(nx: int, levels: int, ny: int | None = None, box=(-1.0, 1.0, -1.0, 1.0)):
    """Structured meshes with ``nx`` doubled at every level."""
    if levels < 1:
        raise ValueError("levels must be at least 1")
    ny = nx if ny is None else ny
    return [generate_structured_mesh(nx * 2**i, ny * 2**i, box) for i in range(levels)]


def meshes_for_targets(h_targets: Sequence[float], box=(-1.0, 1.0, -1.0, 1.0)) -> list[Mesh]:
    out = []
    for h in h_targets:
        n = structured_nx_for_h(h, box)
        out.append(generate_structured_mesh(n, n, box))
    return out
