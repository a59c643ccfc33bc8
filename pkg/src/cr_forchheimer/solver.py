"""Darcy initialization and the standard and relaxed fixed-point iterations."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import NonlinearMass, SaddleSystem, build_saddle_system
from .cases import ManufacturedCase
from .mesh import FacetTopology, Mesh, TagRule, all_neumann, build_facets
from .spaces import CrSpace, FluxSpace, build_cr_space

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class RankError(SolverError):
    """The saddle-point matrix is singular."""


class DivergenceError(SolverError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite residual {value} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "standard"
    omega: float = 1.0
    tol: float = 1e-8
    n_max: int = 2500

    def __post_init__(self):
        if self.scheme not in ("standard", "relaxed"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        if self.tol <= 0 or self.n_max < 1:
            raise ValueError("tol must be positive and n_max at least 1")


@dataclass(frozen=True)
class SolverResult:
    u_coeffs: np.ndarray
    p_coeffs: np.ndarray
    iterations: int
    converged: bool
    residual_history: tuple = ()
    wall_time: float = 0.0


@dataclass
class IterState:
    u: np.ndarray
    p: np.ndarray  # reduced potential unknowns
    multiplier: float | None = None

    def stacked(self) -> np.ndarray:
        extra = [] if self.multiplier is None else [self.multiplier]
        return np.concatenate([self.u, self.p, extra])


class DarcyForchheimerProblem:
    """Discrete problem on one mesh: spaces, linear blocks and the nonlinear-block assembler."""

    def __init__(self, case: ManufacturedCase, mesh: Mesh, k: int, tag_rule: TagRule = all_neumann,
                 topo: FacetTopology | None = None, compatibility: str = "error",
                 weight_degree: int | None = None):
        self.case = case
        self.mesh = mesh
        self.k = k
        self.topo = build_facets(mesh, tag_rule) if topo is None else topo
        self.cr: CrSpace = build_cr_space(mesh, self.topo, k)
        self.flux = FluxSpace(mesh, k - 1)
        self.alpha = case.alpha
        self.beta = case.beta
        self.system, self.p_lift, self.B_full = build_saddle_system(
            self.flux, self.cr, case.Kinv, case.mu / case.rho, case.f, case.b, case.g_N,
            case.g_D, compatibility,
        )
        self.nonlinear = NonlinearMass(self.flux, case.alpha, case.beta / case.rho, weight_degree)

    def potential(self, reduced: np.ndarray) -> np.ndarray:
        """Full CR coefficients from reduced unknowns (adds the Dirichlet lift)."""
        return self.cr.lift(reduced, self.p_lift)

    def system_at(self, u: np.ndarray | None) -> SaddleSystem:
        if u is None or self.beta == 0:
            return self.system
        return self.system.with_nonlinear(self.nonlinear(u))


def _factor(S):
    try:
        return spla.splu(
            S.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as exc:
        raise RankError(f"singular Schur complement of size {S.shape[0]}: {exc}") from None


def solve_linear_saddle(system: SaddleSystem, method: str = "condensed") -> IterState:
    """Solve the bordered saddle-point system.

    ``method="direct"`` factorizes the full bordered matrix; ``"condensed"`` (default)
    eliminates the flux first, which is much cheaper and agrees to round-off.

    ``M + N`` is block diagonal (one block per cell), so it is inverted cell by cell and
    the potential solves ``S p = B A^{-1} r_u - r_p + c^T lam`` with ``S = B A^{-1} B^T``.
    When a mean-value constraint is present, ``S`` annihilates the constant vector: one
    unknown is pinned, the kernel vector is recovered from the same factorization, and
    ``p`` is shifted onto ``c p = 0`` afterwards.
    """
    if method not in ("condensed", "direct"):
        raise ValueError(f"unknown method {method!r}")
    if method == "direct":
        return _solve_monolithic(system)
    try:
        blocks = system.flux_blocks()
    except ValueError:
        return _solve_monolithic(system)
    try:
        inv = np.linalg.inv(blocks)
    except np.linalg.LinAlgError:
        raise RankError("singular cell block in the flux mass matrix") from None
    n_cells, m, _ = inv.shape
    Ainv = sp.bsr_matrix((inv, np.arange(n_cells), np.arange(n_cells + 1)),
                         shape=(system.n_u, system.n_u)).tocsr()
    B = system.B
    S = (B @ Ainv @ B.T).tocsc()
    g = B @ (Ainv @ system.rhs_u) - system.rhs_p
    lam = None
    if system.c is None:
        p = _factor(S).solve(g)
    else:
        lu = _factor(S[1:, 1:])
        kernel = np.empty(system.n_p)
        kernel[0] = 1.0
        kernel[1:] = lu.solve(-S[1:, 0].toarray().ravel())
        ck = float(system.c @ kernel)
        if abs(ck) < 1e-14 * np.linalg.norm(system.c) * np.linalg.norm(kernel):
            raise RankError("mean-value constraint does not fix the potential kernel")
        lam = -float(kernel @ g) / ck
        rhs = g + system.c * lam
        p = np.empty(system.n_p)
        p[0] = 0.0
        p[1:] = lu.solve(rhs[1:])
        p -= (system.c @ p) / ck * kernel
    u = Ainv @ (system.rhs_u - B.T @ p)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(u))):
        raise RankError("saddle-point solve produced non-finite values")
    return IterState(u, p, lam)


def _solve_monolithic(system: SaddleSystem) -> IterState:
    A = system.matrix()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise RankError(f"singular saddle-point matrix of size {A.shape[0]}: {exc}") from None
    s = lu.solve(system.rhs())
    if not np.all(np.isfinite(s)):
        raise RankError("saddle-point solve produced non-finite values")
    u = s[: system.n_u]
    p = s[system.n_u : system.n_u + system.n_p]
    lam = float(s[-1]) if system.c is not None else None
    return IterState(u, p, lam)


def residual_norm(system: SaddleSystem, s: np.ndarray, r: np.ndarray | None = None) -> float:
    """Euclidean norm of ``A s - r`` with ``A`` carrying the nonlinear block of ``system``."""
    r = system.rhs() if r is None else r
    return float(np.linalg.norm(system.apply(s) - r))


def darcy_init(problem: DarcyForchheimerProblem) -> IterState:
    """Linear Darcy solve (no Forchheimer term) used as initial guess."""
    return solve_linear_saddle(problem.system)


def fixed_point_step(state: IterState, problem: DarcyForchheimerProblem) -> IterState:
    return solve_linear_saddle(problem.system_at(state.u))


def relaxed_step(state: IterState, problem: DarcyForchheimerProblem, omega: float) -> IterState:
    if not 0.0 < omega <= 1.0:
        raise ValueError(f"omega must lie in (0, 1], got {omega}")
    new = solve_linear_saddle(problem.system_at(state.u))
    u = omega * new.u + (1.0 - omega) * state.u
    return IterState(u, new.p, new.multiplier)


def _checked_system(problem: DarcyForchheimerProblem, state: IterState, n: int) -> SaddleSystem:
    """System with the weight at ``state.u``; an overflowing weight is reported as divergence."""
    if not np.all(np.isfinite(state.u)):
        raise DivergenceError(n, math.nan)
    system = problem.system_at(state.u)
    if system.N is not None and not np.all(np.isfinite(system.N.data)):
        raise DivergenceError(n, math.inf)
    return system


def run(problem: DarcyForchheimerProblem, config: SolverConfig = SolverConfig(),
        initial: IterState | None = None) -> SolverResult:
    """Iterate until ``||A s - r|| <= tol`` or ``n_max`` steps."""
    start = time.perf_counter()
    state = darcy_init(problem) if initial is None else initial
    omega = config.omega if config.scheme == "relaxed" else 1.0
    system = _checked_system(problem, state, 0)
    history = [residual_norm(system, state.stacked())]
    converged = False
    n = 0
    while n < config.n_max:
        n += 1
        new = solve_linear_saddle(system)
        if omega == 1.0:
            state = new
        else:
            state = IterState(omega * new.u + (1.0 - omega) * state.u, new.p, new.multiplier)
        system = _checked_system(problem, state, n)
        res = residual_norm(system, state.stacked())
        history.append(res)
        if not np.isfinite(res):
            raise DivergenceError(n, res)
        if res <= config.tol:
            converged = True
            break
    log.debug("fixed point: %d iterations, residual %.3e", n, history[-1])
    return SolverResult(
        state.u.copy(), problem.potential(state.p), n, converged, tuple(history), time.perf_counter() - start
    )
