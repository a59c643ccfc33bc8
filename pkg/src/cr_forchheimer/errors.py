"""Relative error measures, L^p norms on triangulations and convergence-rate fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polybasis import quadrature_triangle
from .spaces import CrSpace, FluxSpace, cell_values

ZERO_NORM = 1e-300


@dataclass(frozen=True)
class ErrorValue:
    """Relative error, or the absolute one (``absolute=True``) when the exact norm vanishes."""

    value: float
    absolute: bool = False

    def __float__(self) -> float:
        return self.value


@dataclass
class ErrorReport:
    """Errors on a mesh sequence.

    Attributes
    ----------
    h : list of float
        Mesh sizes, coarse to fine.
    E_u, E_p : list of float
        Relative flux ``L^2`` error and relative broken ``W^{1, alpha'}`` potential error.
    rates : dict
        ``rate_u``/``rate_p`` (least-squares fit) and ``last_rate_u``/``last_rate_p``
        (two finest levels). Empty with fewer than two levels.
    """

    h: list = field(default_factory=list)
    E_u: list = field(default_factory=list)
    E_p: list = field(default_factory=list)
    rates: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(e < 0 for e in self.E_u) or any(e < 0 for e in self.E_p):
            raise ValueError("errors must be nonnegative")

    def add(self, h: float, e_u: float, e_p: float) -> None:
        if e_u < 0 or e_p < 0:
            raise ValueError("errors must be nonnegative")
        self.h.append(float(h))
        self.E_u.append(float(e_u))
        self.E_p.append(float(e_p))
        self.rates = {}
        if len(self.h) >= 2:
            for name, errs in (("u", self.E_u), ("p", self.E_p)):
                pairs = list(zip(self.h, errs))
                try:
                    self.rates[f"rate_{name}"] = fit_rate(pairs)
                    self.rates[f"last_rate_{name}"] = fit_rate(pairs[-2:])
                except ValueError:
                    self.rates[f"rate_{name}"] = math.nan
                    self.rates[f"last_rate_{name}"] = math.nan


def _quadrature(mesh, degree: int):
    rule = quadrature_triangle(degree)
    pts = mesh.map_points(rule.points)
    w = rule.weights[None, :] * (2.0 * mesh.areas())[:, None]
    return rule, pts, w


def lp_norm(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    """``(sum w |v|^p)^(1/p)`` where ``values`` carry the vector components on the leading axis."""
    v = np.asarray(values, dtype=float)
    mag = np.sqrt((v**2).sum(axis=0)) if v.ndim == weights.ndim + 1 else np.abs(v)
    return float(np.sum(weights * mag**p) ** (1.0 / p))


def _relative(err: float, ref: float) -> ErrorValue:
    if ref <= ZERO_NORM:
        return ErrorValue(err, absolute=True)
    return ErrorValue(err / ref)


def error_flux_l2(u_exact, u_h: np.ndarray, flux: FluxSpace, degree: int | None = None) -> ErrorValue:
    """Relative ``L^2`` error of a discrete flux against ``u_exact(x, y) -> (2, ...)``.

    The default quadrature degree is ``2k + 6`` with ``k - 1`` the flux degree.
    """
    k = flux.k_minus_1 + 1
    deg = 2 * k + 6 if degree is None else degree
    rule, pts, w = _quadrature(flux.mesh, deg)
    exact = np.asarray(u_exact(pts[..., 0], pts[..., 1]), dtype=float)
    exact = np.broadcast_to(exact, (2,) + pts.shape[:2])
    disc = flux.values(u_h, rule.points)  # (T, nq, 2)
    diff = exact - np.moveaxis(disc, -1, 0)
    return _relative(lp_norm(diff, w, 2.0), lp_norm(exact, w, 2.0))


def error_potential_grad(p_exact_grad, p_h: np.ndarray, space: CrSpace, alpha: float,
                         degree: int | None = None) -> ErrorValue:
    """Relative broken ``L^{alpha'}`` norm of ``grad p - grad_h p_h``, ``alpha' = alpha / (alpha - 1)``."""
    if alpha <= 2:
        raise ValueError(f"alpha must exceed 2, got {alpha}")
    q = alpha / (alpha - 1.0)
    deg = 2 * space.k + 6 if degree is None else degree
    rule, pts, w = _quadrature(space.mesh, deg)
    exact = np.asarray(p_exact_grad(pts[..., 0], pts[..., 1]), dtype=float)
    exact = np.broadcast_to(exact, (2,) + pts.shape[:2])
    _, grad = cell_values(space, p_h, rule.points)
    diff = exact - np.moveaxis(grad, -1, 0)
    return _relative(lp_norm(diff, w, q), lp_norm(exact, w, q))


def fit_rate(pairs) -> float:
    """Least-squares slope of ``log E`` against ``log h``.

    Parameters
    ----------
    pairs : sequence of (h, E)
        At least two levels with ``h`` strictly decreasing and ``E > 0``.
    """
    arr = np.asarray(list(pairs), dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] != 2:
        raise ValueError("need at least two (h, E) pairs")
    h, e = arr[:, 0], arr[:, 1]
    if np.any(h <= 0) or np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ValueError("mesh sizes and errors must be positive")
    if np.any(np.diff(h) >= 0):
        raise ValueError("mesh sizes must be strictly decreasing")
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)
