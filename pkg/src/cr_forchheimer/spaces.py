"""Crouzeix-Raviart spaces of arbitrary order, the discontinuous flux space and their operators.

Local numbering of the CR functions on a cell:

* odd ``k``: 3 facet bubbles, ``3 (k-1)`` facet modal functions, then the bulk modal functions;
* even ``k``: 3 vertex functions, ``3 (k-1)`` facet modal functions, the bulk modal
  functions, then the bulk bubble.

Local facet ``i`` is opposite local vertex ``i``. Facet modal functions and facet Legendre
moments use the global orientation of a facet, from its lower to its higher vertex index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import FacetTopology, Mesh
from .polybasis import (
    BARY_TOL,
    CellModalBasis,
    bulk_bubble,
    edge_points,
    legendre_table,
    n_modes,
    quadrature_edge,
    quadrature_triangle,
    scaled_monomials,
)

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]


def n_bulk_modal(k: int) -> int:
    return max(k - 1, 0) * max(k - 2, 0) // 2


def bulk_exponents(k: int) -> list[tuple[int, int]]:
    return [(a, d - a) for d in range(k - 2) for a in range(d, -1, -1)]


def local_cr_basis(k: int, lam: np.ndarray, low_first: np.ndarray, with_bubble: bool = True):
    """Local CR functions as polynomials of the barycentric coordinates.

    Parameters
    ----------
    k : int
        Polynomial order.
    lam : ndarray, shape (nc, nq, 3)
        Barycentric coordinates of the evaluation points on each cell.
    low_first : ndarray of bool, shape (nc, 3)
        True when, on local facet ``i``, local vertex ``(i+1) % 3`` has the lower global index.
    with_bubble : bool
        Include the bulk bubble (even ``k``).

    Returns
    -------
    val : ndarray, shape (nc, nq, nloc)
    dlam : ndarray, shape (nc, nq, nloc, 3)
        Partial derivatives with respect to each barycentric coordinate.
    """
    nc, nq, _ = lam.shape
    vals, ders = [], []

    def push(v, d):
        vals.append(v)
        ders.append(d)

    zero = np.zeros((nc, nq))
    if k % 2:
        P, dP = legendre_table(k, 1.0 - 2.0 * lam)
        for i in range(3):
            d = [zero, zero, zero]
            d[i] = -2.0 * dP[k][..., i]
            push(P[k][..., i], np.stack(d, axis=-1))
    else:
        for i in range(3):
            d = [zero, zero, zero]
            d[i] = np.ones((nc, nq))
            push(lam[..., i], np.stack(d, axis=-1))

    if k >= 2:
        for i in range(3):
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            ia = np.where(low_first[:, i], i1, i2)
            ib = np.where(low_first[:, i], i2, i1)
            la = np.take_along_axis(lam, ia[:, None, None], axis=2)[..., 0]
            lb = np.take_along_axis(lam, ib[:, None, None], axis=2)[..., 0]
            S, dS = legendre_table(k - 2, lb - la)
            for j in range(1, k):
                s, ds = S[j - 1], dS[j - 1]
                v = la * lb * s
                da = lb * s - la * lb * ds
                db = la * s + la * lb * ds
                d = np.zeros((nc, nq, 3))
                np.put_along_axis(d, np.broadcast_to(ia[:, None, None], (nc, nq, 1)), da[..., None], 2)
                np.put_along_axis(d, np.broadcast_to(ib[:, None, None], (nc, nq, 1)), db[..., None], 2)
                push(v, d)

    if k >= 3:
        b3 = lam[..., 0] * lam[..., 1] * lam[..., 2]
        db3 = np.stack(
            [lam[..., 1] * lam[..., 2], lam[..., 0] * lam[..., 2], lam[..., 0] * lam[..., 1]], -1
        )
        A, dA = legendre_table(k - 3, 2.0 * lam[..., 0] - 1.0)
        B, dB = legendre_table(k - 3, 2.0 * lam[..., 1] - 1.0)
        for a, b in bulk_exponents(k):
            g = A[a] * B[b]
            v = b3 * g
            d = db3 * g[..., None]
            d[..., 0] += b3 * 2.0 * dA[a] * B[b]
            d[..., 1] += b3 * A[a] * 2.0 * dB[b]
            push(v, d)

    if k % 2 == 0 and with_bubble:
        v, d = bulk_bubble(k, lam)
        push(v, d)

    return np.stack(vals, axis=-1), np.stack(ders, axis=-2)


@dataclass
class Constraints:
    """Affine parametrisation ``x = lift + T @ y`` of the Dirichlet-constrained coefficients."""

    free: np.ndarray
    fixed: np.ndarray
    T: sp.csr_matrix
    support_free: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    coupling: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    data_map: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n_free(self) -> int:
        return self.free.size


class CrSpace:
    """Global CR space of order ``k`` on a mesh with tagged facets."""

    def __init__(self, mesh: Mesh, topo: FacetTopology, k: int):
        if int(k) != k or k < 1:
            raise ValueError(f"order k must be an integer >= 1, got {k}")
        self.mesh = mesh
        self.topo = topo
        self.k = k = int(k)
        V, E, T = mesh.n_vertices, topo.n_facets, mesh.n_cells
        nb = n_bulk_modal(k)
        cf = topo.cell_facets
        cv = mesh.cells
        cols = []
        if k % 2:
            cols.append(cf)  # facet bubbles
            offset = E
        else:
            cols.append(cv)
            offset = V
        for i in range(3):
            for j in range(k - 1):
                cols.append(offset + cf[:, i : i + 1] * (k - 1) + j)
        offset += E * (k - 1)
        cols.append(offset + np.arange(T)[:, None] * nb + np.arange(nb)[None, :])
        offset += T * nb
        self.removed_bubble = None
        if k % 2 == 0:
            # the piecewise bulk bubble is globally continuous, so drop one (cell 0)
            self.removed_bubble = 0
            bub = np.full((T, 1), -1, dtype=np.int64)
            bub[1:, 0] = offset + np.arange(T - 1)
            cols.append(bub)
            offset += T - 1
        self.cell_dofs = np.concatenate([np.asarray(c, dtype=np.int64) for c in cols], axis=1)
        self.n_dofs = int(offset)
        self.n_local = self.cell_dofs.shape[1]
        ends = cv[:, [[1, 2], [2, 0], [0, 1]]]  # (T, 3, 2)
        self.low_first = ends[:, :, 0] < ends[:, :, 1]
        self.grad_lam = mesh.barycentric_gradients()
        self.has_mean_constraint = topo.dirichlet.size == 0
        self._build_dof_kinds(V, E, T, nb)
        self.constraints = self._build_constraints()

    # ------------------------------------------------------------------ layout
    def _build_dof_kinds(self, V, E, T, nb):
        k = self.k
        kinds, owners, modes = [], [], []
        if k % 2:
            kinds += ["facet_bubble"] * E
            owners += list(range(E))
            modes += [0] * E
        else:
            kinds += ["vertex"] * V
            owners += list(range(V))
            modes += [0] * V
        for e in range(E):
            for j in range(1, k):
                kinds.append("facet_modal")
                owners.append(e)
                modes.append(j)
        for t in range(T):
            for m in range(nb):
                kinds.append("bulk_modal")
                owners.append(t)
                modes.append(m)
        if k % 2 == 0:
            for t in range(1, T):
                kinds.append("bulk_bubble")
                owners.append(t)
                modes.append(0)
        self.dof_kind = np.array(kinds)
        self.dof_owner = np.array(owners, dtype=np.int64)
        self.dof_mode = np.array(modes, dtype=np.int64)
        self.dof_table = {(a, b, c): i for i, (a, b, c) in enumerate(zip(kinds, owners, modes))}

    def dof_index(self, kind: str, owner: int, mode: int = 0) -> int:
        return self.dof_table[(kind, owner, mode)]

    # -------------------------------------------------------------- evaluation
    def basis(self, lam: np.ndarray, cells=None):
        """Values and physical gradients of the local basis at barycentric points.

        ``lam`` is (nq, 3) for the same points on every cell or (nc, nq, 3).
        Returns values (nc, nq, nloc) and gradients (nc, nq, nloc, 2).
        """
        cells = np.arange(self.mesh.n_cells) if cells is None else np.asarray(cells)
        if lam.ndim == 2:
            lam = np.broadcast_to(lam, (cells.size,) + lam.shape)
        val, dlam = local_cr_basis(self.k, lam, self.low_first[cells])
        grad = np.einsum("tqli,tid->tqld", dlam, self.grad_lam[cells])
        return val, grad

    def facet_lam(self, facet: int | np.ndarray, side: int, t: np.ndarray):
        """Barycentrics on the ``side`` cell (0 left, 1 right) of facet points at parameters ``t``.

        ``t`` runs from the lower to the higher global vertex of the facet.
        """
        facets = np.atleast_1d(facet)
        cells = (self.topo.left if side == 0 else self.topo.right)[facets]
        li = self.topo.local_index[facets, side]
        s = edge_points(np.asarray(t, dtype=float))  # weights of lower / higher vertex
        lam = np.zeros((facets.size, s.shape[0], 3))
        lo = self.topo.facets[facets, 0]
        for n, (c, i) in enumerate(zip(cells, li)):
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            v1 = self.mesh.cells[c, i1]
            a, b = (i1, i2) if v1 == lo[n] else (i2, i1)
            lam[n, :, a] = s[:, 0]
            lam[n, :, b] = s[:, 1]
        return cells, lam

    def facet_trace(self, facet, side: int, t: np.ndarray):
        """Basis values of the ``side`` cell on facet points; also returns the dof indices."""
        cells, lam = self.facet_lam(facet, side, t)
        val, grad = self.basis(lam, cells)
        return val, grad, self.cell_dofs[cells]

    def locate(self, cell: int, x) -> np.ndarray:
        lam = self.mesh.barycentric(cell, x)
        if lam.min() < -BARY_TOL:
            raise ValueError(f"point {tuple(np.asarray(x, float))} lies outside cell {cell}")
        return lam

    # -------------------------------------------------------------- constraints
    def facet_moment_matrix(self, facets: np.ndarray, n_moments: int, normalize: bool = True):
        """Sparse rows ``|F|^-1 int_F phi S_j`` (j < n_moments) for the given facets."""
        rule = quadrature_edge(2 * self.k + 2)
        P, _ = legendre_table(max(n_moments - 1, 0), rule.points)
        rows, cols, vals = [], [], []
        if facets.size:
            val, _, dofs = self.facet_trace(facets, 0, rule.points)
            fac = 0.5 if normalize else 0.5 * self.topo.lengths[facets][:, None]
            fac = np.broadcast_to(fac, (facets.size, 1))
            mom = np.einsum("q,fql,jq->fjl", rule.weights, val, P[:n_moments]) * fac[:, :, None]
            for n in range(facets.size):
                for j in range(n_moments):
                    keep = dofs[n] >= 0
                    rows.append(np.full(keep.sum(), n * n_moments + j))
                    cols.append(dofs[n][keep])
                    vals.append(mom[n, j][keep])
        shape = (facets.size * n_moments, self.n_dofs)
        if not rows:
            return sp.csr_matrix(shape)
        M = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        ).tocsr()
        M.sum_duplicates()
        return M

    def _build_constraints(self) -> Constraints:
        n = self.n_dofs
        dfacets = self.topo.dirichlet
        if dfacets.size == 0:
            free = np.arange(n)
            return Constraints(free, np.zeros(0, dtype=np.int64), sp.identity(n, format="csr"))
        C = self.facet_moment_matrix(dfacets, self.k).toarray()
        C[np.abs(C) < 1e-13 * np.abs(C).max()] = 0.0
        support = np.flatnonzero(np.any(C != 0.0, axis=0))
        Cs = C[:, support]
        Q, R, piv = sla.qr(Cs, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        rank = int((diag > 1e-10 * diag[0]).sum())
        fixed = support[piv[:rank]]
        sfree = support[piv[rank:]]
        R11 = R[:rank, :rank]
        coupling = -sla.solve_triangular(R11, R[:rank, rank:])  # x_fixed = coupling @ x_sfree + ...
        data_map = sla.solve_triangular(R11, Q[:, :rank].T)  # ... + data_map @ moments(g)
        is_fixed = np.zeros(n, dtype=bool)
        is_fixed[fixed] = True
        free = np.flatnonzero(~is_fixed)
        col_of = -np.ones(n, dtype=np.int64)
        col_of[free] = np.arange(free.size)
        rows = [free]
        cols = [np.arange(free.size)]
        vals = [np.ones(free.size)]
        if sfree.size:
            rr, cc = np.meshgrid(fixed, col_of[sfree], indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(coupling.ravel())
        T = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, free.size),
        ).tocsr()
        T.eliminate_zeros()
        return Constraints(free, fixed, T, sfree, coupling, data_map)

    def dirichlet_moments(self, g_D: ScalarField) -> np.ndarray:
        """Normalized moments ``|F|^-1 int_F g S_j`` on every Dirichlet facet (facet-major)."""
        dfacets = self.topo.dirichlet
        k = self.k
        rule = quadrature_edge(2 * k + 6)
        P, _ = legendre_table(k - 1, rule.points)
        xy = self.mesh.vertices
        a = xy[self.topo.facets[dfacets, 0]]
        b = xy[self.topo.facets[dfacets, 1]]
        s = edge_points(rule.points)
        pts = a[:, None, :] * s[None, :, 0:1] + b[:, None, :] * s[None, :, 1:2]
        g = np.asarray(g_D(pts[..., 0], pts[..., 1]), dtype=float) * np.ones(pts.shape[:2])
        mom = 0.5 * np.einsum("q,fq,jq->fj", rule.weights, g, P)
        return mom.ravel()

    def lift(self, reduced: np.ndarray, dirichlet_values: np.ndarray | None = None) -> np.ndarray:
        x = self.constraints.T @ reduced
        if dirichlet_values is not None:
            x = x + dirichlet_values
        return x


def build_cr_space(mesh: Mesh, topo: FacetTopology, k: int) -> CrSpace:
    """Crouzeix-Raviart space of order ``k``; Dirichlet handling follows the facet tags."""
    return CrSpace(mesh, topo, k)


def apply_dirichlet(space: CrSpace, g_D: ScalarField) -> np.ndarray:
    """Coefficient vector carrying the Dirichlet moments of ``g_D`` (zeros on free dofs).

    Any CR function ``lift(y, values)`` then satisfies the Dirichlet moment conditions.
    """
    c = space.constraints
    values = np.zeros(space.n_dofs)
    if c.fixed.size == 0:
        return values
    values[c.fixed] = c.data_map @ space.dirichlet_moments(g_D)
    return values


class FluxSpace:
    """Discontinuous vector P_{k-1}; coefficients are laid out as (cell, component, mode)."""

    def __init__(self, mesh: Mesh, k_minus_1: int):
        self.mesh = mesh
        self.k_minus_1 = k_minus_1
        self.scalar = CellModalBasis(mesh, k_minus_1)
        self.n_modes = self.scalar.n
        self.n_dofs = 2 * mesh.n_cells * self.n_modes

    def cell_dofs(self) -> np.ndarray:
        T, n = self.mesh.n_cells, self.n_modes
        return np.arange(2 * T * n).reshape(T, 2 * n)

    def values(self, coeffs: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Field values at barycentric points (nq, 3) on every cell, shape (T, nq, 2)."""
        pts = self.mesh.map_points(lam)
        phi = self.scalar.values(pts)
        C = np.asarray(coeffs).reshape(self.mesh.n_cells, 2, self.n_modes)
        return np.einsum("tqm,tdm->tqd", phi, C)

    def eval(self, coeffs: np.ndarray, cell: int, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float).reshape(1, 1, 2)
        phi = self.scalar.values(pts, np.array([cell]))[0, 0]
        C = np.asarray(coeffs).reshape(self.mesh.n_cells, 2, self.n_modes)[cell]
        return C @ phi


def _cell_quadrature(mesh: Mesh, degree: int):
    rule = quadrature_triangle(degree)
    pts = mesh.map_points(rule.points)
    w = rule.weights[None, :] * (2.0 * mesh.areas())[:, None]
    return rule, pts, w


def project_l2(space, field, degree: int | None = None) -> np.ndarray:
    """Piecewise L2 projection onto a :class:`FluxSpace` (vector field) or a
    :class:`CellModalBasis` (scalar field); ``field(x, y)`` is evaluated at quadrature points."""
    if isinstance(space, FluxSpace):
        basis, vector = space.scalar, True
    else:
        basis, vector = space, False
    mesh = basis.mesh
    deg = 2 * basis.degree + 6 if degree is None else degree
    _, pts, w = _cell_quadrature(mesh, deg)
    phi = basis.values(pts)
    vals = np.asarray(field(pts[..., 0], pts[..., 1]), dtype=float)
    if vector:
        vals = np.broadcast_to(vals, (2,) + pts.shape[:2])
        coeffs = np.einsum("tq,dtq,tqm->tdm", w, vals, phi)
    else:
        vals = np.broadcast_to(vals, pts.shape[:2])
        coeffs = np.einsum("tq,tq,tqm->tm", w, vals, phi)
    return coeffs.ravel()


def _bulk_moment_functions(space: CrSpace, pts: np.ndarray) -> np.ndarray:
    k = space.k
    mesh = space.mesh
    c = mesh.cell_coords().mean(axis=1)
    h = mesh.diameters()
    loc = (pts - c[:, None, :]) / h[:, None, None]
    return scaled_monomials(k - 3, loc[..., 0], loc[..., 1])


def _interpolation_system(space: CrSpace):
    """Sparse matrix of the interpolation functionals applied to the global basis.

    Row blocks: odd ``k`` -- facet moments j < k, bulk moments; even ``k`` -- vertex
    values, facet moments j < k-1, bulk moments, bubble coefficients.
    """
    k = space.k
    mesh, topo = space.mesh, space.topo
    E, T = topo.n_facets, mesh.n_cells
    blocks = []
    if k % 2 == 0:
        V = mesh.n_vertices
        blocks.append(sp.eye(V, space.n_dofs, format="csr"))
    n_fmom = k if k % 2 else k - 1
    if n_fmom:
        blocks.append(space.facet_moment_matrix(np.arange(E), n_fmom))
    nb = n_bulk_modal(k)
    if nb:
        rule, pts, w = _cell_quadrature(mesh, 2 * k + 2)
        val, _ = space.basis(rule.points)
        m = _bulk_moment_functions(space, pts)
        mom = np.einsum("tq,tql,tqb->tbl", w, val, m) / mesh.areas()[:, None, None]
        dofs = space.cell_dofs
        rows = np.broadcast_to(np.arange(T * nb).reshape(T, nb, 1), mom.shape)
        cols = np.broadcast_to(dofs[:, None, :], mom.shape)
        keep = cols >= 0
        blocks.append(
            sp.coo_matrix((mom[keep], (rows[keep], cols[keep])), shape=(T * nb, space.n_dofs)).tocsr()
        )
    if k % 2 == 0:
        start = space.n_dofs - (T - 1)
        idx = np.arange(T - 1)
        blocks.append(sp.csr_matrix((np.ones(T - 1), (idx, start + idx)), shape=(T - 1, space.n_dofs)))
    D = sp.vstack(blocks, format="csc")
    return D


def interpolation_functionals(space: CrSpace, q: ScalarField) -> np.ndarray:
    k = space.k
    mesh, topo = space.mesh, space.topo
    parts = []
    if k % 2 == 0:
        parts.append(np.asarray(q(mesh.vertices[:, 0], mesh.vertices[:, 1]), float) * np.ones(mesh.n_vertices))
    n_fmom = k if k % 2 else k - 1
    if n_fmom:
        rule = quadrature_edge(2 * k + 6)
        P, _ = legendre_table(n_fmom - 1, rule.points)
        xy = mesh.vertices
        a = xy[topo.facets[:, 0]]
        b = xy[topo.facets[:, 1]]
        s = edge_points(rule.points)
        pts = a[:, None, :] * s[None, :, 0:1] + b[:, None, :] * s[None, :, 1:2]
        g = np.asarray(q(pts[..., 0], pts[..., 1]), float) * np.ones(pts.shape[:2])
        parts.append((0.5 * np.einsum("q,fq,jq->fj", rule.weights, g, P)).ravel())
    nb = n_bulk_modal(k)
    if nb:
        _, pts, w = _cell_quadrature(mesh, 2 * k + 6)
        m = _bulk_moment_functions(space, pts)
        g = np.asarray(q(pts[..., 0], pts[..., 1]), float) * np.ones(pts.shape[:2])
        parts.append((np.einsum("tq,tq,tqb->tb", w, g, m) / mesh.areas()[:, None]).ravel())
    if k % 2 == 0:
        parts.append(np.zeros(mesh.n_cells - 1))
    return np.concatenate(parts)


def cr_interpolate(space: CrSpace, q: ScalarField) -> np.ndarray:
    """CR interpolant of ``q``: moment interpolant for odd ``k``, modal interpolant for even ``k``."""
    D = _interpolation_system(space)
    return spla.spsolve(D, interpolation_functionals(space, q))


def eval_cr(space: CrSpace, coeffs: np.ndarray, cell: int, x) -> float:
    lam = space.locate(cell, x)
    val, _ = space.basis(lam.reshape(1, 1, 3), np.array([cell]))
    dofs = space.cell_dofs[cell]
    keep = dofs >= 0
    return float(val[0, 0, keep] @ np.asarray(coeffs)[dofs[keep]])


def eval_cr_grad(space: CrSpace, coeffs: np.ndarray, cell: int, x) -> np.ndarray:
    lam = space.locate(cell, x)
    _, grad = space.basis(lam.reshape(1, 1, 3), np.array([cell]))
    dofs = space.cell_dofs[cell]
    keep = dofs >= 0
    return np.asarray(coeffs)[dofs[keep]] @ grad[0, 0, keep]


def cell_values(space: CrSpace, coeffs: np.ndarray, lam: np.ndarray):
    """CR function values and broken gradients at barycentric points (nq, 3) on all cells."""
    val, grad = space.basis(lam)
    dofs = space.cell_dofs
    c = np.where(dofs >= 0, np.asarray(coeffs)[np.maximum(dofs, 0)], 0.0)
    return np.einsum("tql,tl->tq", val, c), np.einsum("tqld,tl->tqd", grad, c)


def facet_values(space: CrSpace, coeffs: np.ndarray, facets: np.ndarray, side: int, t: np.ndarray):
    """Traces of a CR function from the ``side`` cell on facet points, shape (nf, nq)."""
    if facets.size == 0:
        return np.zeros((0, np.size(t)))
    val, _, dofs = space.facet_trace(facets, side, t)
    c = np.where(dofs >= 0, np.asarray(coeffs)[np.maximum(dofs, 0)], 0.0)
    return np.einsum("fql,fl->fq", val, c)


def mode_count(k: int) -> int:
    return n_modes(k)
