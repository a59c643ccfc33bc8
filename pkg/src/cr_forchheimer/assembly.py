"""Sparse blocks and load vectors of the dual mixed CR discretization.

Flux blocks are stored as block-sparse-row matrices with one dense ``2n x 2n`` block per
cell (``n`` scalar modes, two Cartesian components).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .polybasis import edge_points, quadrature_edge, quadrature_triangle
from .spaces import CrSpace, FluxSpace


class DataError(ValueError):
    """Problem data violate a model assumption."""


class CompatibilityWarning(UserWarning):
    pass


COMPATIBILITY_DEGREE = 20


def polynomial_degree(k: int) -> int:
    return 2 * k + 2


def weight_degree(k: int) -> int:
    """Quadrature degree for the non-polynomial Forchheimer weight."""
    return 2 * k + 6


class FluxQuadrature:
    """Cached quadrature points, weights and orthonormal basis values on every cell."""

    def __init__(self, flux: FluxSpace, degree: int):
        mesh = flux.mesh
        self.flux = flux
        self.rule = quadrature_triangle(degree)
        self.points = mesh.map_points(self.rule.points)
        self.weights = self.rule.weights[None, :] * (2.0 * mesh.areas())[:, None]
        self.phi = flux.scalar.values(self.points)

    def field(self, coeffs: np.ndarray) -> np.ndarray:
        """Flux values at the quadrature points, shape (T, nq, 2)."""
        C = np.asarray(coeffs).reshape(self.flux.mesh.n_cells, 2, self.flux.n_modes)
        return np.einsum("tqm,tdm->tqd", self.phi, C)

    def scalar_mass(self, weight: np.ndarray | None = None) -> np.ndarray:
        w = self.weights if weight is None else self.weights * weight
        return np.einsum("tq,tqm,tqn->tmn", w, self.phi, self.phi)


def _block_diag(blocks: np.ndarray) -> sp.bsr_matrix:
    T, m, _ = blocks.shape
    return sp.bsr_matrix((blocks, np.arange(T), np.arange(T + 1)), shape=(T * m, T * m))


def _component_blocks(scalar: np.ndarray) -> np.ndarray:
    """(T, n, n) scalar blocks -> (T, 2n, 2n) blocks acting identically on both components."""
    T, n, _ = scalar.shape
    out = np.zeros((T, 2 * n, 2 * n))
    out[:, :n, :n] = scalar
    out[:, n:, n:] = scalar
    return out


def cell_tensors(Kinv, n_cells: int) -> np.ndarray:
    """Broadcast a constant (2, 2) or per-cell (T, 2, 2) tensor and check it is SPD."""
    K = np.asarray(Kinv, dtype=float)
    if K.shape == (2, 2):
        K = np.broadcast_to(K, (n_cells, 2, 2))
    if K.shape != (n_cells, 2, 2):
        raise DataError(f"tensor must have shape (2, 2) or ({n_cells}, 2, 2), got {K.shape}")
    if not np.allclose(K, np.swapaxes(K, 1, 2), rtol=1e-12, atol=1e-14):
        raise DataError("inverse permeability is not symmetric")
    lam = np.linalg.eigvalsh(K)
    if np.any(lam[:, 0] <= 0):
        raise DataError(f"inverse permeability not positive definite on cell {int(np.argmin(lam[:, 0]))}")
    return K


def min_eigenvalue(Kinv, n_cells: int) -> float:
    return float(np.linalg.eigvalsh(cell_tensors(Kinv, n_cells))[:, 0].min())


def assemble_weighted_mass(flux: FluxSpace, Kinv=np.eye(2), mu_over_rho: float = 1.0) -> sp.bsr_matrix:
    """``(mu/rho) int K^-1 u . v`` for piecewise-constant SPD ``K^-1``."""
    K = cell_tensors(Kinv, flux.mesh.n_cells)
    quad = FluxQuadrature(flux, polynomial_degree(flux.k_minus_1 + 1))
    S = quad.scalar_mass()
    n = flux.n_modes
    blocks = np.einsum("tde,tmn->tdmen", K, S).reshape(-1, 2 * n, 2 * n)
    return _block_diag(mu_over_rho * blocks)


def forchheimer_weight(values: np.ndarray, alpha: float) -> np.ndarray:
    """``|u|^(alpha-2)`` of flux values (..., 2); overflow yields ``inf`` (the solver reports it)."""
    with np.errstate(over="ignore"):
        return np.linalg.norm(values, axis=-1) ** (alpha - 2.0)


class NonlinearMass:
    """Reassembles ``(beta/rho) int |w|^(alpha-2) u . v`` for changing ``w``."""

    def __init__(self, flux: FluxSpace, alpha: float, beta_over_rho: float, degree: int | None = None):
        if not alpha > 2:
            raise ValueError(f"alpha must exceed 2, got {alpha}")
        if beta_over_rho < 0:
            raise ValueError("beta/rho must be nonnegative")
        self.alpha = alpha
        self.beta_over_rho = beta_over_rho
        deg = weight_degree(flux.k_minus_1 + 1) if degree is None else degree
        self.quad = FluxQuadrature(flux, deg)

    def blocks(self, u: np.ndarray) -> np.ndarray:
        weight = forchheimer_weight(self.quad.field(u), self.alpha)
        return _component_blocks(self.beta_over_rho * self.quad.scalar_mass(weight))

    def __call__(self, u: np.ndarray) -> sp.bsr_matrix:
        return _block_diag(self.blocks(u))


def assemble_nonlinear_mass(flux: FluxSpace, u_prev: np.ndarray, alpha: float, beta_over_rho: float,
                            degree: int | None = None) -> sp.bsr_matrix:
    return NonlinearMass(flux, alpha, beta_over_rho, degree)(u_prev)


def assemble_coupling(flux: FluxSpace, cr: CrSpace) -> sp.csr_matrix:
    """``B[q, v] = int grad_h psi_q . phi_v`` over the full (unconstrained) CR space."""
    if flux.mesh is not cr.mesh:
        raise ValueError("flux and CR spaces live on different meshes")
    deg = polynomial_degree(cr.k)
    rule = quadrature_triangle(deg)
    mesh = cr.mesh
    pts = mesh.map_points(rule.points)
    w = rule.weights[None, :] * (2.0 * mesh.areas())[:, None]
    phi = flux.scalar.values(pts)
    _, grad = cr.basis(rule.points)
    loc = np.einsum("tq,tqld,tqm->tldm", w, grad, phi).reshape(mesh.n_cells, cr.n_local, -1)
    rows = np.broadcast_to(cr.cell_dofs[:, :, None], loc.shape)
    cols = np.broadcast_to(flux.cell_dofs()[:, None, :], loc.shape)
    keep = rows >= 0
    B = sp.coo_matrix((loc[keep], (rows[keep], cols[keep])), shape=(cr.n_dofs, flux.n_dofs)).tocsr()
    B.sum_duplicates()
    return B


def _boundary_points(cr: CrSpace, facets: np.ndarray, t: np.ndarray):
    xy = cr.mesh.vertices
    a = xy[cr.topo.facets[facets, 0]]
    b = xy[cr.topo.facets[facets, 1]]
    s = edge_points(t)
    return a[:, None, :] * s[None, :, 0:1] + b[:, None, :] * s[None, :, 1:2]


def neumann_integral(cr: CrSpace, g_N, degree: int | None = None) -> float:
    facets = cr.topo.neumann
    rule = quadrature_edge(weight_degree(cr.k) if degree is None else degree)
    pts = _boundary_points(cr, facets, rule.points)
    n = np.broadcast_to(cr.topo.normals[facets][:, None, :], pts.shape)
    g = np.asarray(g_N(pts[..., 0], pts[..., 1], n[..., 0], n[..., 1]), float) * np.ones(pts.shape[:2])
    return float(0.5 * np.einsum("q,fq,f->", rule.weights, g, cr.topo.lengths[facets]))


def domain_integral(mesh, fn, degree: int) -> float:
    rule = quadrature_triangle(degree)
    pts = mesh.map_points(rule.points)
    w = rule.weights[None, :] * (2.0 * mesh.areas())[:, None]
    vals = np.asarray(fn(pts[..., 0], pts[..., 1]), float) * np.ones(pts.shape[:2])
    return float((w * vals).sum())


def assemble_rhs(flux: FluxSpace, cr: CrSpace, f, b, g_N, compatibility: str = "error"):
    """Load vectors ``int f . v`` and ``-int b q + int_{Gamma_N} g_N q``.

    ``f(x, y)`` returns a pair of arrays, ``b(x, y)`` an array, and
    ``g_N(x, y, nx, ny)`` an array (``n`` is the outward normal).
    ``compatibility`` is ``"error"``, ``"warn"`` or ``"ignore"`` for the pure-Neumann check.
    """
    mesh = cr.mesh
    deg = weight_degree(cr.k)
    rule = quadrature_triangle(deg)
    pts = mesh.map_points(rule.points)
    w = rule.weights[None, :] * (2.0 * mesh.areas())[:, None]

    phi = flux.scalar.values(pts)
    fv = np.asarray(f(pts[..., 0], pts[..., 1]), float)
    fv = np.broadcast_to(fv, (2,) + pts.shape[:2])
    rhs_u = np.einsum("tq,dtq,tqm->tdm", w, fv, phi).ravel()

    val, _ = cr.basis(rule.points)
    bv = np.asarray(b(pts[..., 0], pts[..., 1]), float) * np.ones(pts.shape[:2])
    loc = -np.einsum("tq,tq,tql->tl", w, bv, val)
    dofs = cr.cell_dofs
    keep = dofs >= 0
    rhs_p = np.bincount(dofs[keep], weights=loc[keep], minlength=cr.n_dofs)

    facets = cr.topo.neumann
    if facets.size:
        erule = quadrature_edge(deg)
        epts = _boundary_points(cr, facets, erule.points)
        n = np.broadcast_to(cr.topo.normals[facets][:, None, :], epts.shape)
        g = np.asarray(g_N(epts[..., 0], epts[..., 1], n[..., 0], n[..., 1]), float)
        g = g * np.ones(epts.shape[:2])
        tval, _, tdofs = cr.facet_trace(facets, 0, erule.points)
        loc = 0.5 * cr.topo.lengths[facets][:, None] * np.einsum("q,fq,fql->fl", erule.weights, g, tval)
        keep = tdofs >= 0
        rhs_p += np.bincount(tdofs[keep], weights=loc[keep], minlength=cr.n_dofs)

    if cr.has_mean_constraint and compatibility != "ignore":
        # a statement about the data, so integrate well beyond the load-vector degree
        lhs = domain_integral(mesh, b, max(deg, COMPATIBILITY_DEGREE))
        rhs = neumann_integral(cr, g_N, max(deg, COMPATIBILITY_DEGREE))
        if abs(lhs - rhs) > 1e-10 * (1.0 + abs(lhs)):
            msg = f"compatibility violated: int b = {lhs:.6e}, int g_N = {rhs:.6e}"
            if compatibility == "error":
                raise DataError(msg)
            warnings.warn(msg, CompatibilityWarning, stacklevel=2)
    return rhs_u, rhs_p


def assemble_mean_constraint(cr: CrSpace) -> np.ndarray:
    """Row ``c[q] = int psi_q`` of the zero-mean condition."""
    rule = quadrature_triangle(polynomial_degree(cr.k))
    w = rule.weights[None, :] * (2.0 * cr.mesh.areas())[:, None]
    val, _ = cr.basis(rule.points)
    loc = np.einsum("tq,tql->tl", w, val)
    dofs = cr.cell_dofs
    keep = dofs >= 0
    return np.bincount(dofs[keep], weights=loc[keep], minlength=cr.n_dofs)


@dataclass
class SaddleSystem:
    """``[[M + N, B^T, 0], [B, 0, c^T], [0, c, 0]]`` on the reduced potential unknowns.

    ``B``, ``c`` and ``rhs_p`` already act on the Dirichlet-reduced CR coefficients and
    ``rhs_u`` carries the Dirichlet lift.
    """

    M: sp.spmatrix
    N: sp.spmatrix | None
    B: sp.csr_matrix
    c: np.ndarray | None
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    block_size: int = 0  # size of the diagonal blocks of M + N (one per cell)

    @property
    def n_u(self) -> int:
        return self.M.shape[0]

    @property
    def n_p(self) -> int:
        return self.B.shape[0]

    @property
    def size(self) -> int:
        return self.n_u + self.n_p + (1 if self.c is not None else 0)

    def with_nonlinear(self, N) -> "SaddleSystem":
        return SaddleSystem(self.M, N, self.B, self.c, self.rhs_u, self.rhs_p, self.block_size)

    def flux_block(self):
        return self.M if self.N is None else self.M + self.N

    def flux_blocks(self) -> np.ndarray:
        """Dense per-cell blocks of ``M + N``, shape (T, m, m)."""
        m = self.block_size
        if m <= 0:
            raise ValueError("block size unknown")
        A = sp.bsr_matrix(self.flux_block(), blocksize=(m, m))
        A.sort_indices()
        T = self.n_u // m
        if A.data.shape[0] != T or not np.array_equal(A.indices, np.arange(T)):
            raise ValueError("flux block is not block diagonal")
        return A.data

    def matrix(self) -> sp.csc_matrix:
        A = self.flux_block()
        rows = [[A, self.B.T], [self.B, None]]
        if self.c is not None:
            c = sp.csr_matrix(self.c.reshape(1, -1))
            rows = [[A, self.B.T, None], [self.B, None, c.T], [None, c, None]]
        return sp.bmat(rows, format="csc")

    def rhs(self) -> np.ndarray:
        parts = [self.rhs_u, self.rhs_p]
        if self.c is not None:
            parts.append(np.zeros(1))
        return np.concatenate(parts)

    def apply(self, s: np.ndarray) -> np.ndarray:
        u = s[: self.n_u]
        p = s[self.n_u : self.n_u + self.n_p]
        top = self.flux_block() @ u + self.B.T @ p
        mid = self.B @ u
        if self.c is None:
            return np.concatenate([top, mid])
        lam = s[-1]
        mid = mid + self.c * lam
        return np.concatenate([top, mid, [self.c @ p]])


def build_saddle_system(flux: FluxSpace, cr: CrSpace, Kinv, mu_over_rho: float, f, b, g_N,
                        g_D=None, compatibility: str = "error"):
    """Assemble the linear part of the system; returns ``(system, p_lift, B_full)``."""
    from .spaces import apply_dirichlet

    M = assemble_weighted_mass(flux, Kinv, mu_over_rho)
    B_full = assemble_coupling(flux, cr)
    rhs_u, rhs_p = assemble_rhs(flux, cr, f, b, g_N, compatibility)
    T = cr.constraints.T
    p_lift = np.zeros(cr.n_dofs)
    if cr.constraints.fixed.size:
        if g_D is None:
            raise ValueError("Dirichlet facets present but no Dirichlet datum given")
        p_lift = apply_dirichlet(cr, g_D)
    B = (T.T @ B_full).tocsr()
    c = None
    if cr.has_mean_constraint:
        c = T.T @ assemble_mean_constraint(cr)
    system = SaddleSystem(M, None, B, c, rhs_u - B_full.T @ p_lift, T.T @ rhs_p, 2 * flux.n_modes)
    return system, p_lift, B_full
