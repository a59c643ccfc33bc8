"""Broken Sobolev seminorms on CR spaces and sampled Sobolev-Poincare / trace constants.

For ``p`` in ``[1, 2)`` the two-dimensional Sobolev indices are ``p# = p / (2 - p)``
(trace) and ``p* = 2p / (2 - p)`` (volume). The seminorms weigh interior and Dirichlet
facet jumps by ``h_F^e`` with ``e = -p/q' - 2p/p' + 2p/q'``; with ``q = p#`` the exponent
vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .polybasis import MAX_QUADRATURE_DEGREE, edge_points, quadrature_edge, quadrature_triangle
from .spaces import (
    CrSpace,
    _interpolation_system,
    interpolation_functionals,
)

DEGENERATE = 1e-14


@dataclass(frozen=True)
class BrokenNormSpec:
    """Exponents of a broken ``W^{1,p;q}`` seminorm in two dimensions.

    Attributes
    ----------
    p : float
        Gradient exponent, ``1 <= p < 2``.
    q : float, optional
        Lebesgue exponent of the facet jumps; defaults to ``p#``.
    """

    p: float
    q: float | None = None

    def __post_init__(self):
        if not 1.0 <= self.p < 2.0:
            raise ValueError(f"p must lie in [1, 2), got {self.p}")
        if self.q is None:
            object.__setattr__(self, "q", self.p_sharp)
        if self.q < 1.0:
            raise ValueError("q must be at least 1")

    @property
    def p_sharp(self) -> float:
        return self.p / (2.0 - self.p)

    @property
    def p_star(self) -> float:
        return 2.0 * self.p / (2.0 - self.p)

    @property
    def facet_exponent(self) -> float:
        p, q = self.p, self.q
        inv_pc = 1.0 - 1.0 / p  # 1/p'
        inv_qc = 1.0 - 1.0 / q  # 1/q'
        return -p * inv_qc - 2.0 * p * inv_pc + 2.0 * p * inv_qc


def _power_degree(k: int, q: float) -> int:
    """Quadrature degree for ``|v|^q`` with ``v`` of degree ``k`` (exact when ``q`` is even)."""
    return min(int(math.ceil(q * k)) + 2, MAX_QUADRATURE_DEGREE)


def _facet_points(space: CrSpace, facets: np.ndarray, t: np.ndarray) -> np.ndarray:
    xy = space.mesh.vertices
    a = xy[space.topo.facets[facets, 0]]
    b = xy[space.topo.facets[facets, 1]]
    s = edge_points(t)
    return a[:, None, :] * s[None, :, 0:1] + b[:, None, :] * s[None, :, 1:2]


def _point_operator(values: np.ndarray, dofs: np.ndarray, n_dofs: int) -> sp.csr_matrix:
    """Sparse map from global coefficients to values at (nc, nq) points, given local basis
    values (nc, nq, nloc) and the local-to-global dof table (nc, nloc; -1 = absent)."""
    nc, nq, nloc = values.shape
    rows = np.broadcast_to(np.arange(nc * nq).reshape(nc, nq, 1), values.shape)
    cols = np.broadcast_to(dofs[:, None, :], values.shape)
    keep = cols >= 0
    return sp.csr_matrix((values[keep], (rows[keep], cols[keep])), shape=(nc * nq, n_dofs))


class BrokenNormEvaluator:
    """Quadrature operators for the seminorms and Lebesgue norms of many CR functions at once.

    Coefficient arrays may be one vector (n_dofs,) or a stack (n_samples, n_dofs); the
    returned norms have the matching shape.
    """

    def __init__(self, space: CrSpace, spec: BrokenNormSpec):
        self.space = space
        self.spec = spec
        mesh, topo, n = space.mesh, space.topo, space.n_dofs
        areas2 = 2.0 * mesh.areas()
        dofs = space.cell_dofs

        rule = quadrature_triangle(2 * space.k + 6)
        _, grad = space.basis(rule.points)
        self._gx = _point_operator(grad[..., 0], dofs, n)
        self._gy = _point_operator(grad[..., 1], dofs, n)
        self._wg = (rule.weights[None, :] * areas2[:, None]).ravel()

        self._domain = {}
        self._boundary = {}
        for q in {spec.p_star, spec.p_sharp}:
            rule = quadrature_triangle(_power_degree(space.k, q))
            val, _ = space.basis(rule.points)
            self._domain[q] = (_point_operator(val, dofs, n),
                               (rule.weights[None, :] * areas2[:, None]).ravel())
            rule = quadrature_edge(_power_degree(space.k, q))
            bf = topo.boundary
            self._boundary[q] = (self._trace_operator(bf, 0, rule.points),
                                 (0.5 * rule.weights[None, :] * topo.lengths[bf][:, None]).ravel())

        rule = quadrature_edge(_power_degree(space.k, spec.q))
        inner, dirichlet = topo.interior, topo.dirichlet
        self.jump_facets = np.concatenate([inner, dirichlet])
        jin = self._trace_operator(inner, 0, rule.points) - self._trace_operator(inner, 1, rule.points)
        self._jump = sp.vstack([jin, self._trace_operator(dirichlet, 0, rule.points)], format="csr")
        self._nq_edge = rule.points.size
        length = topo.lengths[self.jump_facets]
        self._length = length
        self._wj = 0.5 * rule.weights[None, :] * length[:, None]
        self._jump_t = rule.points

    def _trace_operator(self, facets: np.ndarray, side: int, t: np.ndarray) -> sp.csr_matrix:
        if facets.size == 0:
            return sp.csr_matrix((0, self.space.n_dofs))
        val, _, dofs = self.space.facet_trace(facets, side, t)
        return _point_operator(val, dofs, self.space.n_dofs)

    @staticmethod
    def _stack(v):
        v = np.asarray(v, dtype=float)
        return v.reshape(1, -1) if v.ndim == 1 else v, v.ndim == 1

    def grad_norm(self, v):
        V, single = self._stack(v)
        mag = np.sqrt((self._gx @ V.T) ** 2 + (self._gy @ V.T) ** 2)
        out = (self._wg @ mag**self.spec.p) ** (1.0 / self.spec.p)
        return float(out[0]) if single else out

    def jumps(self, v, g_D=None):
        """Jump values (n_samples, n_facets, nq) on :attr:`jump_facets` (interior, then Dirichlet)."""
        V, _ = self._stack(v)
        J = (self._jump @ V.T).T.reshape(V.shape[0], self.jump_facets.size, self._nq_edge)
        if g_D is not None and self.space.topo.dirichlet.size:
            nd = self.space.topo.dirichlet.size
            pts = _facet_points(self.space, self.space.topo.dirichlet, self._jump_t)
            g = np.asarray(g_D(pts[..., 0], pts[..., 1]), float) * np.ones(pts.shape[:2])
            J[:, -nd:, :] -= g
        return J

    def facet_term(self, v, averaged: bool = True, g_D=None):
        V, single = self._stack(v)
        if self.jump_facets.size == 0:
            out = np.zeros(V.shape[0])
            return float(out[0]) if single else out
        J = self.jumps(V, g_D)
        p, q = self.spec.p, self.spec.q
        if averaged:
            mean = np.einsum("fq,sfq->sf", self._wj, J) / self._length
            lq = np.abs(mean) * self._length ** (1.0 / q)
        else:
            lq = np.einsum("fq,sfq->sf", self._wj, np.abs(J) ** q) ** (1.0 / q)
        out = (lq**p @ self._length**self.spec.facet_exponent) ** (1.0 / p)
        return float(out[0]) if single else out

    def tilde_norm(self, v, g_D=None):
        return self.grad_norm(v) + self.facet_term(v, True, g_D)

    def full_norm(self, v, g_D=None):
        return self.grad_norm(v) + self.facet_term(v, False, g_D)

    def domain_lq(self, v, q: float):
        V, single = self._stack(v)
        op, w = self._domain[q] if q in self._domain else self._add_domain(q)
        out = (w @ np.abs(op @ V.T) ** q) ** (1.0 / q)
        return float(out[0]) if single else out

    def boundary_lq(self, v, q: float):
        V, single = self._stack(v)
        op, w = self._boundary[q] if q in self._boundary else self._add_boundary(q)
        out = (w @ np.abs(op @ V.T) ** q) ** (1.0 / q)
        return float(out[0]) if single else out

    def _add_domain(self, q):
        rule = quadrature_triangle(_power_degree(self.space.k, q))
        val, _ = self.space.basis(rule.points)
        w = (rule.weights[None, :] * 2.0 * self.space.mesh.areas()[:, None]).ravel()
        self._domain[q] = (_point_operator(val, self.space.cell_dofs, self.space.n_dofs), w)
        return self._domain[q]

    def _add_boundary(self, q):
        rule = quadrature_edge(_power_degree(self.space.k, q))
        bf = self.space.topo.boundary
        w = (0.5 * rule.weights[None, :] * self.space.topo.lengths[bf][:, None]).ravel()
        self._boundary[q] = (self._trace_operator(bf, 0, rule.points), w)
        return self._boundary[q]


def broken_tilde_norm(space: CrSpace, v: np.ndarray, spec: BrokenNormSpec, g_D=None) -> float:
    """Broken seminorm with facet-averaged jumps: ``||grad_h v||_p`` plus the weighted
    ``L^q`` norms of the mean jumps on interior and Dirichlet facets."""
    return BrokenNormEvaluator(space, spec).tilde_norm(v, g_D)


def broken_full_norm(space: CrSpace, v: np.ndarray, spec: BrokenNormSpec, g_D=None) -> float:
    """Same as :func:`broken_tilde_norm` with the full jumps in place of their facet means."""
    return BrokenNormEvaluator(space, spec).full_norm(v, g_D)


@dataclass(frozen=True)
class ConstantEstimate:
    poincare: float  # max ||v||_{L^p*(Omega)} / ||v||~
    trace: float  # max ||v||_{L^p#(Gamma)} / ||v||~
    n_samples: int
    skipped: int


def smooth_fields(box, n_modes: int = 4):
    """Fields ``xi cos(m pi xi) cos(n pi eta)`` (``xi``, ``eta`` box coordinates in [0, 1]),
    all vanishing on the left side of the box; ``m, n < n_modes``."""
    xmin, xmax, ymin, ymax = box
    fields = []
    for m in range(n_modes):
        for n in range(n_modes):
            def fn(x, y, m=m, n=n):
                xi = (np.asarray(x) - xmin) / (xmax - xmin)
                eta = (np.asarray(y) - ymin) / (ymax - ymin)
                return xi * np.cos(m * np.pi * xi) * np.cos(n * np.pi * eta)

            fields.append(((m, n), fn))
    return fields


def sample_functions(space: CrSpace, n_samples: int, seed: int, sampler: str = "smooth") -> np.ndarray:
    """Random members of the CR space with vanishing Dirichlet moments, one per row.

    ``sampler="smooth"`` draws Gaussian combinations (unit coefficient vector, amplitude
    decaying like ``1 / (1 + m + n)``) of :func:`smooth_fields`, interpolated into the
    space; ``sampler="coefficients"`` draws unit vectors of free coefficients directly.
    Both sets are then mapped through the Dirichlet parametrisation so that the
    zero-moment conditions hold exactly.
    """
    if space.constraints.fixed.size == 0:
        raise ValueError("the space has no Dirichlet facets")
    rng = np.random.default_rng(seed)
    cons = space.constraints
    if sampler == "coefficients":
        y = rng.standard_normal((n_samples, cons.n_free))
    elif sampler == "smooth":
        fields = smooth_fields(space.mesh.domain_box)
        lu = spla.splu(_interpolation_system(space))
        basis = np.column_stack([lu.solve(interpolation_functionals(space, fn)) for _, fn in fields])
        decay = np.array([1.0 / (1.0 + m + n) for (m, n), _ in fields])
        c = rng.standard_normal((n_samples, len(fields)))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        y = (c * decay) @ basis[cons.free].T
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    return np.asarray((cons.T @ y.T).T)


def estimate_constant(space: CrSpace, spec: BrokenNormSpec, n_samples: int = 200, seed: int = 0,
                      sampler: str = "smooth") -> ConstantEstimate:
    """Largest sampled ratios ``||v||_{L^p*(Omega)} / ||v||~`` and ``||v||_{L^p#(Gamma)} / ||v||~``.

    The space must carry Dirichlet facets; samples satisfy zero Dirichlet moments.
    Samples with a denominator below ``1e-14`` are skipped and counted.
    """
    samples = sample_functions(space, n_samples, seed, sampler)
    ev = BrokenNormEvaluator(space, spec)
    den = ev.tilde_norm(samples)
    ok = den >= DEGENERATE
    if not ok.any():
        return ConstantEstimate(math.nan, math.nan, n_samples, n_samples)
    poincare = ev.domain_lq(samples[ok], spec.p_star) / den[ok]
    trace = ev.boundary_lq(samples[ok], spec.p_sharp) / den[ok]
    return ConstantEstimate(float(poincare.max()), float(trace.max()), n_samples, int((~ok).sum()))
