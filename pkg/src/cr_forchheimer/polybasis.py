"""Legendre polynomials, quadrature, nonconforming bubbles and modal bases on triangles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from .mesh import Mesh

MAX_QUADRATURE_DEGREE = 80
BARY_TOL = 1e-12


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # barycentric (n, 3) on the triangle, t in [-1, 1] on an edge
    weights: np.ndarray
    exact_degree: int


@dataclass(frozen=True)
class LocalBasis:
    """Cell-local modal basis ``phi_m(x) = sum_j coeffs[m, j] * mono_j((x - center) / scale)``."""

    kind: str
    degree: int
    owner: int
    center: np.ndarray
    scale: float
    coeffs: np.ndarray

    def __call__(self, points) -> np.ndarray:
        pts = (np.atleast_2d(np.asarray(points, dtype=float)) - self.center) / self.scale
        return scaled_monomials(self.degree, pts[:, 0], pts[:, 1]) @ self.coeffs.T

    def __len__(self) -> int:
        return self.coeffs.shape[0]


def legendre_eval(k: int, x):
    """Legendre polynomial of degree ``k`` on [-1, 1] (three-term recurrence)."""
    return legendre_table(k, x)[0][k]


def legendre_table(kmax: int, x):
    """Values and first derivatives of the Legendre polynomials of degree 0..kmax.

    Returns two arrays of shape ``(kmax + 1,) + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    P = np.empty((kmax + 1,) + x.shape)
    dP = np.empty_like(P)
    P[0] = 1.0
    dP[0] = 0.0
    if kmax >= 1:
        P[1] = x
        dP[1] = 1.0
    for n in range(1, kmax):
        P[n + 1] = ((2 * n + 1) * x * P[n] - n * P[n - 1]) / (n + 1)
        dP[n + 1] = dP[n - 1] + (2 * n + 1) * P[n]
    return P, dP


def _check_degree(degree: int) -> None:
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if degree > MAX_QUADRATURE_DEGREE:
        raise QuadratureError(
            f"degree {degree} unsupported, maximum implemented degree is {MAX_QUADRATURE_DEGREE}"
        )


def quadrature_edge(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [-1, 1] exact for polynomials of the given degree."""
    _check_degree(degree)
    t, w = leggauss(degree // 2 + 1)
    return QuadratureRule(t, w, degree)


def quadrature_triangle(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi rule on the reference triangle (area 1/2)."""
    _check_degree(degree)
    n = degree // 2 + 1
    xi, wx = leggauss(n)
    eta, we = roots_jacobi(n, 1.0, 0.0)
    XI, ETA = np.meshgrid(xi, eta, indexing="ij")
    W = np.outer(wx, we) / 8.0
    y = 0.5 * (1.0 + ETA)
    x = 0.25 * (1.0 + XI) * (1.0 - ETA)
    # reference vertices (0,0), (1,0), (0,1) carry barycentrics 1-x-y, x, y
    bary = np.column_stack([(1.0 - x - y).ravel(), x.ravel(), y.ravel()])
    return QuadratureRule(bary, W.ravel(), degree)


def edge_points(t: np.ndarray) -> np.ndarray:
    """Barycentric (s0, s1) weights for a segment a->b at parameters ``t``: ``(1-t)/2, (1+t)/2``."""
    return np.column_stack([0.5 * (1.0 - t), 0.5 * (1.0 + t)])


def _cell_barycentric(mesh: Mesh, cell: int, x) -> np.ndarray:
    lam = mesh.barycentric(cell, x)
    if lam.min() < -BARY_TOL:
        raise ValueError(f"point {tuple(np.asarray(x, float))} lies outside cell {cell}")
    return lam


def facet_bubble(k: int, lam_opposite):
    """Value and derivative (w.r.t. the barycentric of the opposite vertex) of ``S_k(1 - 2 lam)``."""
    P, dP = legendre_table(k, 1.0 - 2.0 * np.asarray(lam_opposite, dtype=float))
    return P[k], -2.0 * dP[k]


def bulk_bubble(k: int, lam):
    """Bulk bubble ``(-1 + sum_i S_k(1 - 2 lam_i)) / 2`` and its partials w.r.t. each ``lam_i``.

    ``lam`` has shape (..., 3); the partials have the same shape.
    """
    if k % 2 or k < 2:
        raise ValueError(f"bulk bubbles exist for even k >= 2 only, got k={k}")
    lam = np.asarray(lam, dtype=float)
    P, dP = legendre_table(k, 1.0 - 2.0 * lam)
    val = 0.5 * (-1.0 + P[k].sum(axis=-1))
    return val, -dP[k]


def facet_bubble_eval(k: int, mesh: Mesh, cell: int, facet: int, x) -> float:
    """Facet bubble of order ``k`` on ``cell`` for local facet ``facet`` (opposite local vertex)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    lam = _cell_barycentric(mesh, cell, x)
    return float(facet_bubble(k, lam[facet])[0])


def bulk_bubble_eval(k: int, mesh: Mesh, cell: int, x) -> float:
    if k % 2 or k < 2:
        raise ValueError(f"bulk bubbles exist for even k >= 2 only, got k={k}")
    lam = _cell_barycentric(mesh, cell, x)
    return float(bulk_bubble(k, lam)[0])


def monomial_exponents(degree: int) -> list[tuple[int, int]]:
    return [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]


def scaled_monomials(degree: int, x, y) -> np.ndarray:
    """All monomials ``x^a y^b`` with ``a + b <= degree``; last axis indexes the monomial."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.stack([x**a * y**b for a, b in monomial_exponents(degree)], axis=-1)


def scaled_monomial_grads(degree: int, x, y) -> np.ndarray:
    """Gradients of :func:`scaled_monomials`, shape (..., n_mono, 2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gx, gy = [], []
    for a, b in monomial_exponents(degree):
        gx.append(a * x ** max(a - 1, 0) * y**b if a else np.zeros_like(x))
        gy.append(b * x**a * y ** max(b - 1, 0) if b else np.zeros_like(x))
    return np.stack([np.stack(gx, axis=-1), np.stack(gy, axis=-1)], axis=-1)


def n_modes(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


class CellModalBasis:
    """L2(K)-orthonormal basis of P_s(K) on every cell of a mesh.

    Monomials in ``(x - x_K) / h_K`` are orthonormalized through a Cholesky factor of
    their Gram matrix, which is Gram-Schmidt in closed form.
    """

    def __init__(self, mesh: Mesh, degree: int):
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.mesh = mesh
        self.degree = degree
        self.n = n_modes(degree)
        xy = mesh.cell_coords()
        self.centers = xy.mean(axis=1)
        self.scales = mesh.diameters()
        rule = quadrature_triangle(2 * degree)
        pts = mesh.map_points(rule.points)
        w = rule.weights[None, :] * (2.0 * mesh.areas())[:, None]
        mono = self._mono(pts)
        G = np.einsum("tq,tqi,tqj->tij", w, mono, mono)
        L = np.linalg.cholesky(G)
        eye = np.broadcast_to(np.eye(self.n), G.shape)
        # phi = L^{-1} m, so coefficient rows are rows of L^{-1}
        self.coeffs = np.linalg.solve(L, eye)

    def _local(self, points: np.ndarray, cells=None):
        c = self.centers if cells is None else self.centers[cells]
        s = self.scales if cells is None else self.scales[cells]
        return (points - c[:, None, :]) / s[:, None, None]

    def _mono(self, points: np.ndarray, cells=None) -> np.ndarray:
        loc = self._local(points, cells)
        return scaled_monomials(self.degree, loc[..., 0], loc[..., 1])

    def values(self, points: np.ndarray, cells=None) -> np.ndarray:
        """Basis values at physical points (nc, nq, 2) -> (nc, nq, n)."""
        C = self.coeffs if cells is None else self.coeffs[cells]
        return np.einsum("tqj,tmj->tqm", self._mono(points, cells), C)

    def grads(self, points: np.ndarray, cells=None) -> np.ndarray:
        """Basis gradients (nc, nq, n, 2)."""
        C = self.coeffs if cells is None else self.coeffs[cells]
        s = self.scales if cells is None else self.scales[cells]
        loc = self._local(points, cells)
        g = scaled_monomial_grads(self.degree, loc[..., 0], loc[..., 1])
        return np.einsum("tqjd,tmj->tqmd", g, C) / s[:, None, None, None]

    def local_basis(self, cell: int, kind: str = "flux_modal") -> LocalBasis:
        return LocalBasis(
            kind, self.degree, cell, self.centers[cell], float(self.scales[cell]), self.coeffs[cell]
        )


def modal_flux_basis(mesh: Mesh, cell: int, k_minus_1: int) -> LocalBasis:
    """Orthonormal scalar modal basis of P_{k-1} on one cell (each Cartesian component uses it)."""
    return CellModalBasis(mesh, k_minus_1).local_basis(cell)
