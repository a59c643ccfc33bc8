"""Configuration-driven experiment runner.

Usage::

    cr-forchheimer solve --config run.ini [--out DIR] [--quiet]
    cr-forchheimer study --config sweep.ini
    cr-forchheimer inequalities --config ineq.ini
    cr-forchheimer --version

Configurations are INI files with sections ``[model]``, ``[discretization]``,
``[solver]``, ``[mesh]`` and ``[output]``. Comma-separated values define sweeps
(``study`` and ``inequalities`` only).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cases import case1, case2
from .errors import error_flux_l2, error_potential_grad, fit_rate
from .inequalities import BrokenNormSpec, estimate_constant
from .mesh import (
    SIDES, all_neumann, build_facets, dirichlet_on, generate_structured_mesh, perturb_mesh, structured_nx_for_h,
)
from .solver import DarcyForchheimerProblem, DivergenceError, SolverConfig, SolverError, run
from .spaces import build_cr_space

log = logging.getLogger("cr_forchheimer")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4
THREADS_ENV = "CR_FORCHHEIMER_THREADS"
NUMBER_FORMAT = "%.15e"
ROUNDOFF = 1e-10  # errors below this are exact up to floating point

ERRORS_HEADER = ["k", "alpha", "beta", "scheme", "omega", "h", "E_u", "E_p", "rate_u", "rate_p"]
ITERATIONS_HEADER = ["k", "alpha", "beta", "scheme", "omega", "nx", "h", "iterations", "converged",
                     "residual"]
CONSTANTS_HEADER = ["h", "k", "max_ratio_poincare", "max_ratio_trace"]

CASES = {"case1": case1, "case2": case2}

# section -> key -> (parser, default); a default of None marks a required key
_SCHEMA = {
    "model": {"case": (str, None), "alpha": ("floats", "3"), "beta": ("floats", "10"),
              "mu": (float, "1"), "rho": (float, "1")},
    "discretization": {"k": ("ints", None), "boundary": (str, "pure_neumann"),
                       "dirichlet_sides": ("strs", "left"), "p": (float, "1.5"),
                       "samples": (int, "200"), "sampler": (str, "smooth")},
    "solver": {"scheme": (str, "standard"), "omega": ("floats", "1"), "tol": (float, "1e-8"),
               "n_max": (int, "2500"), "expect_nonconvergence": ("bool", "false")},
    "mesh": {"levels": ("ints", ""), "h": ("floats", ""), "perturb": (float, "0")},
    "output": {"dir": (str, "results"), "seed": (int, "0")},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; list-valued fields span a parameter grid."""

    case: str
    k: tuple
    alpha: tuple = (3.0,)
    beta: tuple = (10.0,)
    mu: float = 1.0
    rho: float = 1.0
    scheme: str = "standard"
    omega: tuple = (1.0,)
    tol: float = 1e-8
    n_max: int = 2500
    expect_nonconvergence: bool = False
    mesh_levels: tuple = (6, 10, 19, 36)
    perturb: float = 0.0
    boundary: str = "pure_neumann"
    dirichlet_sides: tuple = ("left",)
    p: float = 1.5
    samples: int = 200
    sampler: str = "smooth"
    output_dir: str = "results"
    seed: int = 0
    box: tuple = field(default=(-1.0, 1.0, -1.0, 1.0))

    @property
    def grid(self):
        """Parameter combinations ``(k, alpha, beta, omega)`` in a fixed order."""
        return list(itertools.product(self.k, self.alpha, self.beta, self.omega))

    def mesh(self, nx: int):
        """Structured ``nx`` by ``nx`` mesh, jittered when ``perturb > 0`` (seeded by ``seed`` and ``nx``)."""
        mesh = generate_structured_mesh(nx, nx, self.box)
        if self.perturb > 0:
            mesh = perturb_mesh(mesh, self.perturb, seed=self.seed * 1000 + nx)
        return mesh

    @property
    def tag_rule(self):
        return all_neumann if self.boundary == "pure_neumann" else dirichlet_on(*self.dirichlet_sides)


def _convert(kind, raw: str, section: str, key: str):
    def items():
        return [s.strip() for s in raw.split(",") if s.strip()]

    try:
        if kind == "floats":
            return tuple(float(s) for s in items())
        if kind == "ints":
            return tuple(_int(s) for s in items())
        if kind == "strs":
            return tuple(items())
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if kind is int:
            return _int(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(s)
    return int(v)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate INI text; unknown sections or keys are reported together."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    unknown = [f"[{s}]" for s in parser.sections() if s not in _SCHEMA]
    for section in parser.sections():
        if section in _SCHEMA:
            unknown += [f"[{section}] {k}" for k in parser[section] if k not in _SCHEMA[section]]
    if unknown:
        raise ConfigError("unknown configuration entries: " + ", ".join(unknown))
    values = {}
    for section, keys in _SCHEMA.items():
        for key, (kind, default) in keys.items():
            raw = parser.get(section, key, fallback=default)
            if raw is None:
                raise ConfigError(f"missing required key [{section}] {key}")
            values[(section, key)] = _convert(kind, raw, section, key) if raw != "" else ()

    case = values[("model", "case")]
    if case not in CASES:
        raise ConfigError(f"case must be one of {sorted(CASES)}, got {case!r} "
                          "(other manufactured problems are built with cases.derive_case)")
    k = values[("discretization", "k")]
    if not k or any(v < 1 for v in k):
        raise ConfigError("k must be a positive integer (or a list of them)")
    alpha = values[("model", "alpha")]
    if not alpha or any(not a > 2 for a in alpha):
        raise ConfigError(f"alpha must exceed 2, got {alpha}")
    beta = values[("model", "beta")]
    if not beta or any(b < 0 for b in beta):
        raise ConfigError("beta must be nonnegative")
    mu, rho = values[("model", "mu")], values[("model", "rho")]
    if mu <= 0 or rho <= 0:
        raise ConfigError("mu and rho must be positive")
    scheme = values[("solver", "scheme")]
    omega = values[("solver", "omega")]
    if scheme not in ("standard", "relaxed"):
        raise ConfigError(f"scheme must be 'standard' or 'relaxed', got {scheme!r}")
    if not omega or any(not 0.0 < w <= 1.0 for w in omega):
        raise ConfigError(f"omega must lie in (0, 1], got {omega}")
    if scheme == "standard" and omega != (1.0,):
        raise ConfigError("omega only applies to the relaxed scheme")
    tol, n_max = values[("solver", "tol")], values[("solver", "n_max")]
    if tol <= 0 or n_max < 1:
        raise ConfigError("tol must be positive and n_max at least 1")
    boundary = values[("discretization", "boundary")]
    if boundary not in ("pure_neumann", "mixed"):
        raise ConfigError(f"boundary must be 'pure_neumann' or 'mixed', got {boundary!r}")
    sides = values[("discretization", "dirichlet_sides")]
    if set(sides) - set(SIDES) or not sides:
        raise ConfigError(f"dirichlet_sides must be chosen from {SIDES}")
    p = values[("discretization", "p")]
    if not 1.0 <= p < 2.0:
        raise ConfigError(f"p must lie in [1, 2), got {p}")
    if values[("discretization", "samples")] < 1:
        raise ConfigError("samples must be positive")
    if values[("discretization", "sampler")] not in ("smooth", "coefficients"):
        raise ConfigError("sampler must be 'smooth' or 'coefficients'")
    levels, hs = values[("mesh", "levels")], values[("mesh", "h")]
    if levels and hs:
        raise ConfigError("give either [mesh] levels or [mesh] h, not both")
    box = (-1.0, 1.0, -1.0, 1.0)
    if hs:
        if any(h <= 0 for h in hs):
            raise ConfigError("mesh sizes must be positive")
        levels = tuple(structured_nx_for_h(h, box) for h in hs)
    if not levels:
        levels = (6, 10, 19, 36)
    if any(n < 1 for n in levels):
        raise ConfigError("mesh levels must be positive")
    perturb = values[("mesh", "perturb")]
    if not 0.0 <= perturb < 0.25:
        raise ConfigError(f"perturb must lie in [0, 0.25), got {perturb}")
    return ExperimentConfig(
        case=case, k=k, alpha=alpha, beta=beta, mu=mu, rho=rho, scheme=scheme, omega=omega,
        tol=tol, n_max=n_max, expect_nonconvergence=values[("solver", "expect_nonconvergence")],
        mesh_levels=tuple(levels), perturb=perturb, boundary=boundary, dirichlet_sides=sides, p=p,
        samples=values[("discretization", "samples")], sampler=values[("discretization", "sampler")],
        output_dir=values[("output", "dir")], seed=values[("output", "seed")], box=box,
    )


@dataclass
class RunRecord:
    k: int
    alpha: float
    beta: float
    omega: float
    nx: int
    h: float
    iterations: int
    converged: bool
    residual: float
    E_u: float
    E_p: float
    notes: tuple = ()


def _workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring %s=%r", THREADS_ENV, raw)
        return 1


def _ordered_map(fn, items):
    """Map preserving input order; runs on up to ``CR_FORCHHEIMER_THREADS`` threads."""
    n = _workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def solve_one(config: ExperimentConfig, k: int, alpha: float, beta: float, omega: float,
              nx: int) -> RunRecord:
    case = CASES[config.case](alpha, beta, config.mu, config.rho)
    mesh = config.mesh(nx)
    problem = DarcyForchheimerProblem(case, mesh, k, config.tag_rule)
    solver = SolverConfig(config.scheme, omega, config.tol, config.n_max)
    try:
        result = run(problem, solver)
    except DivergenceError as exc:
        log.warning("k=%d alpha=%g beta=%g omega=%g nx=%d: %s", k, alpha, beta, omega, nx, exc)
        return RunRecord(k, alpha, beta, omega, nx, mesh.h, exc.iteration, False, math.inf,
                         math.nan, math.nan, tuple(case.notes))
    e_u = float(error_flux_l2(case.u_exact, result.u_coeffs, problem.flux))
    e_p = float(error_potential_grad(case.grad_p_exact, result.p_coeffs, problem.cr, alpha))
    return RunRecord(k, alpha, beta, omega, nx, mesh.h, result.iterations, result.converged,
                     result.residual_history[-1], e_u, e_p, tuple(case.notes))


def run_runs(config: ExperimentConfig) -> list[RunRecord]:
    tasks = [(k, a, b, w, nx) for (k, a, b, w) in config.grid for nx in config.mesh_levels]
    return _ordered_map(lambda t: solve_one(config, *t), tasks)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    return NUMBER_FORMAT % x


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _rates(records: list[RunRecord]):
    """Global least-squares and two-finest-level slopes for E_u and E_p (nan when undefined)."""
    out = {}
    for name in ("E_u", "E_p"):
        pairs = [(r.h, getattr(r, name)) for r in records]
        for label, sub in (("fit", pairs), ("last", pairs[-2:])):
            try:
                out[(name, label)] = fit_rate(sub) if len(sub) >= 2 else None
            except ValueError:
                out[(name, label)] = math.nan
    return out


def _groups(config: ExperimentConfig, records: list[RunRecord]):
    n = len(config.mesh_levels)
    for i, params in enumerate(config.grid):
        yield params, records[i * n : (i + 1) * n]


def run_convergence_study(config: ExperimentConfig, out: Path, quiet: bool = False) -> int:
    """Run every grid point on every mesh level; write ``errors.csv``, ``iterations.csv`` and
    ``report.txt`` to ``out``. Returns the process exit code."""
    start = time.perf_counter()
    records = run_runs(config)
    err_rows, it_rows = [], []
    lines = [f"cr-forchheimer {__version__}: {config.case}, scheme={config.scheme}, "
             f"boundary={config.boundary}, tol={config.tol:g}, n_max={config.n_max}"
             + (f", vertex jitter {config.perturb:g}" if config.perturb else ""), ""]
    notes = sorted({n for r in records for n in r.notes})
    if notes:
        lines.append("data deviations:")
        lines += [f"  - {n}" for n in notes]
        lines.append("")
    for (k, a, b, w), recs in _groups(config, records):
        rates = _rates(recs)
        for r in recs:
            err_rows.append([k, a, b, config.scheme, w, r.h, r.E_u, r.E_p,
                             rates[("E_u", "fit")], rates[("E_p", "fit")]])
            it_rows.append([k, a, b, config.scheme, w, r.nx, r.h, r.iterations, r.converged, r.residual])
        lines.append(f"k={k} alpha={a:g} beta={b:g} omega={w:g}")
        lines.append(f"  {'nx':>4} {'h':>10} {'iters':>6} {'conv':>5} {'E_u':>12} {'E_p':>12}")
        for r in recs:
            lines.append(f"  {r.nx:>4d} {r.h:>10.4e} {r.iterations:>6d} {str(r.converged):>5} "
                         f"{r.E_u:>12.4e} {r.E_p:>12.4e}")
        if len(recs) >= 2:
            for name in ("E_u", "E_p"):
                fit, last = rates[(name, "fit")], rates[(name, "last")]
                largest = max(getattr(r, name) for r in recs)
                if largest <= ROUNDOFF:
                    lines.append(f"  rate {name}: errors at round-off level (max {largest:.1e}), no rate")
                    continue
                verdict = "pass" if abs(fit - k) <= 0.25 else "FAIL"
                lines.append(f"  rate {name}: fit {fit:.3f}, finest pair {last:.3f}, "
                             f"expected {k} +- 0.25: {verdict}")
        lines.append("")
    failed = [r for r in records if not r.converged]
    if failed and not config.expect_nonconvergence:
        lines.append(f"{len(failed)} run(s) did not converge")
    elif failed:
        lines.append(f"{len(failed)} run(s) did not converge (expected by configuration)")
    lines.append(f"wall time {time.perf_counter() - start:.1f} s")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "errors.csv", ERRORS_HEADER, err_rows)
    write_csv(out / "iterations.csv", ITERATIONS_HEADER, it_rows)
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    if not quiet:
        print("\n".join(lines))
    if failed and not config.expect_nonconvergence:
        return EXIT_DIVERGENCE
    return EXIT_OK


def run_inequality_study(config: ExperimentConfig, out: Path, quiet: bool = False) -> int:
    """Sampled Sobolev-Poincare and trace ratios per mesh level and order; writes ``constants.csv``."""
    spec = BrokenNormSpec(config.p)
    rule = dirichlet_on(*config.dirichlet_sides)

    def task(item):
        nx, k = item
        mesh = config.mesh(nx)
        space = build_cr_space(mesh, build_facets(mesh, rule), k)
        est = estimate_constant(space, spec, config.samples, config.seed, config.sampler)
        return mesh.h, k, est

    items = [(nx, k) for nx in config.mesh_levels for k in config.k]
    results = _ordered_map(task, items)
    rows = [[h, k, e.poincare, e.trace] for h, k, e in results]
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "constants.csv", CONSTANTS_HEADER, rows)
    lines = [f"p={spec.p:g}, p*={spec.p_star:g}, p#={spec.p_sharp:g}, samples={config.samples}, "
             f"seed={config.seed}, sampler={config.sampler}",
             f"  {'h':>10} {'k':>2} {'poincare':>10} {'trace':>10} {'skipped':>7}"]
    for h, k, e in results:
        lines.append(f"  {h:>10.4e} {k:>2d} {e.poincare:>10.4f} {e.trace:>10.4f} {e.skipped:>7d}")
    pc = [e.poincare for _, _, e in results]
    tr = [e.trace for _, _, e in results]
    lines.append(f"spread (max/min): poincare {max(pc) / min(pc):.3f}, trace {max(tr) / min(tr):.3f}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    if not quiet:
        print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cr-forchheimer", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve one parameter set on the configured mesh levels"),
                        ("study", "convergence / iteration study over a parameter grid"),
                        ("inequalities", "sampled Sobolev-Poincare and trace constants")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        config = parse_config(text)
        if args.command == "solve" and len(config.grid) > 1:
            raise ConfigError("solve takes a single parameter set; use study for sweeps")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(config.output_dir)
    try:
        if args.command == "inequalities":
            return run_inequality_study(config, out, args.quiet)
        return run_convergence_study(config, out, args.quiet)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ValueError as exc:  # inconsistent problem data (e.g. compatibility)
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
