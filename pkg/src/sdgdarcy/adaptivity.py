"""Adaptive refinement driver: solve, estimate, mark, refine, record.

Marking uses the standard bulk criterion on squared per-element indicators:
the minimal set of elements whose squared indicators reach a fraction theta
of the total, filled greedily from the largest indicator down (ties broken
by lower element id).  Uniform mode refines every element and ignores theta.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_system
from .errors import AllZeroIndicators, ConfigError, SingularSystem
from .estimator import EstimatorBreakdown, compute_estimator, true_error
from .geometry import PolygonalMesh, refine
from .problem import ProblemSpec
from .solve import solve_system
from .spaces import SpaceConfig

ADAPTIVE = "adaptive"
UNIFORM = "uniform"


def dorfler_mark(indicators, theta: float) -> np.ndarray:
    """Minimal element set whose squared indicators reach theta * total.

    Returns ascending element ids.  Candidates are ordered by descending
    indicator with lower ids first among equals, so the marked set is the
    shortest such prefix; zero-indicator elements are never marked.
    """
    if not 0.0 < theta <= 1.0:
        raise ConfigError(f"theta={theta} outside (0, 1]")
    ind = np.asarray(indicators, dtype=float)
    total = ind.sum()
    if not total > 0.0:
        raise AllZeroIndicators("all element indicators are zero")
    order = np.lexsort((np.arange(ind.size), -ind))
    order = order[ind[order] > 0.0]
    csum = np.cumsum(ind[order])
    cut = int(np.searchsorted(csum, theta * total, side="left"))
    cut = min(cut, order.size - 1)
    return np.sort(order[: cut + 1])


@dataclass(frozen=True)
class AmrConfig:
    """Knobs of one refinement run."""

    theta: float = 0.5
    mode: str = ADAPTIVE
    max_dofs: int = 200_000
    max_iterations: int = 30
    k: int = 1

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta={self.theta} outside (0, 1]")
        if self.mode not in (ADAPTIVE, UNIFORM):
            raise ConfigError(f"mode={self.mode!r} not one of {ADAPTIVE!r}, {UNIFORM!r}")
        if self.k < 1:
            raise ConfigError(f"k={self.k} must be at least 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.max_dofs < 1:
            raise ConfigError("max_dofs must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    """One row of the convergence history."""

    iteration: int
    N: int  # free unknowns of the solved system
    terms: np.ndarray  # (8,) estimator family values
    eta: float
    osc: float
    err_Q: float  # NaN when no exact solution is known
    err_V: float
    err_sdg: float
    EI: float
    n_elements: int
    rho_E: float
    t_solve_ms: float
    t_estimate_ms: float


@dataclass
class ConvergenceHistory:
    """Per-iteration records plus the last solved state."""

    records: list = field(default_factory=list)
    config: AmrConfig = None
    failure: str = None  # set when the loop halted on a singular system
    final_mesh: PolygonalMesh = None
    final_solution: object = None
    final_breakdown: EstimatorBreakdown = None

    @property
    def n_iterations(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def convergence_slope(ns, values, last: int = 4) -> float:
    """Least-squares slope of log(values) against log(ns) over the last
    `last` points."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if ns.size < 2:
        raise ConfigError("slope needs at least two points")
    n = min(last, ns.size)
    x = np.log(ns[-n:])
    y = np.log(values[-n:])
    return float(np.polyfit(x, y, 1)[0])


def amr_loop(
    mesh: PolygonalMesh,
    spec: ProblemSpec,
    config: AmrConfig,
    exact=None,
    callback=None,
) -> ConvergenceHistory:
    """Run solve / estimate / mark / refine until a stopping rule fires.

    Stops on max_iterations, on a refinement that would exceed max_dofs
    (the over-budget mesh is not solved), or on all-zero indicators.  A
    singular system is recorded in `failure` and halts the loop.  When
    given, callback(record, mesh, sol, breakdown, system) runs after each
    record is appended; exporters hook in here.
    """
    history = ConvergenceHistory(config=config)
    nan = float("nan")
    for it in range(config.max_iterations):
        system = assemble_system(mesh, spec, SpaceConfig(config.k))
        if system.n > config.max_dofs:
            if it == 0:
                raise ConfigError(
                    f"initial problem has {system.n} unknowns, above "
                    f"max_dofs={config.max_dofs}"
                )
            break
        t0 = time.perf_counter()
        try:
            sol, _ = solve_system(system)
        except SingularSystem as exc:
            history.failure = str(exc)
            break
        t_solve = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        bd = compute_estimator(mesh, spec, sol)
        if exact is not None:
            er = true_error(mesh, spec, sol, exact, eta=bd.eta)
            err_q, err_v, err_sdg, ei = er.err_Q, er.err_V, er.err_sdg, er.EI
        else:
            err_q = err_v = err_sdg = ei = nan
        t_estimate = (time.perf_counter() - t0) * 1e3

        if history.records and system.n <= history.records[-1].N:
            raise RuntimeError("refinement did not increase the unknown count")
        history.records.append(
            IterationRecord(
                iteration=it,
                N=system.n,
                terms=bd.terms.copy(),
                eta=bd.eta,
                osc=bd.osc,
                err_Q=err_q,
                err_V=err_v,
                err_sdg=err_sdg,
                EI=ei,
                n_elements=mesh.n_elements,
                rho_E=mesh.rho_E,
                t_solve_ms=t_solve,
                t_estimate_ms=t_estimate,
            )
        )
        history.final_mesh = mesh
        history.final_solution = sol
        history.final_breakdown = bd
        if callback is not None:
            callback(history.records[-1], mesh, sol, bd, system)

        if it == config.max_iterations - 1:
            break
        if config.mode == UNIFORM:
            marked = np.arange(mesh.n_elements)
        else:
            try:
                marked = dorfler_mark(bd.element_sq, config.theta)
            except AllZeroIndicators:
                break
        mesh = refine(mesh, marked)
    return history
