"""Barrier-parameter continuation driving the BVP solver to small epsilon.

Both methods follow the same schedule: solve once at eps0, then repeatedly
multiply epsilon by the decay ratio alpha and re-solve warm-started from
the previous solution, stopping after the first solve at or below the
target tolerance. The number of solves is therefore 1 + K where K is the
smallest integer with eps0 * alpha**K <= tol.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import bvpdae, transcription
from .bvpdae import DaeSolution, Mesh, SolverOptions
from .errors import ContinuationError, InfeasibleStartError, IpocError
from .ocp import OcpSpec

__all__ = ["ContinuationConfig", "RunReport", "epsilon_schedule",
           "run_primal", "run_primal_dual"]


@dataclass
class ContinuationConfig:
    eps0: float = 1.0
    alpha: float = 0.1
    tol: float = 1e-7

    def __post_init__(self):
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")
        if not (0 < self.tol <= self.eps0):
            raise ValueError("tol must lie in (0, eps0]")


def epsilon_schedule(config: ContinuationConfig) -> List[float]:
    """The epsilon values visited: eps0, then eps0*alpha**k down through tol."""
    values = [config.eps0]
    eps = config.eps0
    # slack absorbs roundoff in repeated multiplication so counts match
    # exact arithmetic: 1 + smallest K with eps0*alpha**K <= tol
    while eps > config.tol * (1.0 + 1e-12):
        eps *= config.alpha
        values.append(eps)
    return values


@dataclass
class RunReport:
    """Outcome of a continuation run; mirrors the benchmark table columns."""

    method: str
    eps_schedule: List[float]
    newton_iters_per_eps: List[int]
    final_mesh_len: int
    wall_time: float
    alpha: float
    tol: float

    @property
    def eps_iterations(self) -> int:
        return len(self.eps_schedule)

    def to_dict(self):
        return {
            "method": self.method,
            "alpha": self.alpha,
            "tol": self.tol,
            "eps_iterations": self.eps_iterations,
            "eps_schedule": [float(e) for e in self.eps_schedule],
            "newton_iters_per_eps": [int(k) for k in self.newton_iters_per_eps],
            "final_mesh_len": int(self.final_mesh_len),
            "wall_time": float(self.wall_time),
        }


def _solve_step(system, current, eps_prev, eps, options, depth):
    """One continuation step, sub-dividing the epsilon decrement on failure.

    A warm start can sit outside the Newton basin when the decay ratio is
    aggressive; halving the step in log-epsilon (geometric mean) restores
    convergence without changing the published schedule. Returns
    (solution, newton iterations spent on this step).
    """
    system.eps = eps
    try:
        sol = bvpdae.solve(system, current, options)
        return sol, sol.newton_iters
    except IpocError:
        if depth <= 0 or eps_prev is None:
            raise
        mid = float(np.sqrt(eps_prev * eps))
        sol1, it1 = _solve_step(system, current, eps_prev, mid,
                                options, depth - 1)
        sol2, it2 = _solve_step(system, sol1, mid, eps, options, depth - 1)
        return sol2, it1 + it2


def _run(system, guess, config, options, method):
    schedule = epsilon_schedule(config)
    options = options or SolverOptions()
    t0 = time.perf_counter()
    iters_per_eps = []
    current = guess
    last_good = None
    last_eps = None
    for eps in schedule:
        try:
            sol, iters = _solve_step(system, current, last_eps, eps,
                                     options, depth=3)
        except IpocError as exc:
            raise ContinuationError(
                f"{method} continuation failed at eps={eps:.3e}: {exc}",
                eps=eps, last_good=(last_eps, last_good), cause=exc) from exc
        iters_per_eps.append(iters)
        current = sol
        last_good, last_eps = sol, eps
    report = RunReport(
        method=method,
        eps_schedule=schedule,
        newton_iters_per_eps=iters_per_eps,
        final_mesh_len=current.mesh.nodes.size,
        wall_time=time.perf_counter() - t0,
        alpha=config.alpha,
        tol=config.tol,
    )
    return current, report


def _check_interior_guess(spec: OcpSpec, guess):
    """Reject starting trajectories that touch or violate a constraint."""
    d = spec.dims
    if d.n_g == 0 and d.n_c == 0:
        return
    mesh = guess.mesh if isinstance(guess.mesh, Mesh) else Mesh(np.asarray(guess.mesh))
    Y = np.asarray(guess.Y, dtype=float)
    Z = np.asarray(guess.Z_nodes, dtype=float)
    n = d.n
    for i, t in enumerate(mesh.nodes):
        x = Y[i, :n]
        u = Z[i, :d.m]
        if d.n_g:
            gx = np.asarray(spec.g(x))
            if np.any(gx >= 0):
                j = int(np.argmax(gx))
                raise InfeasibleStartError(
                    f"state constraint {j} is violated at node {i} "
                    f"(t={t:.6g}, value {gx[j]:.3e}); the primal method "
                    "needs a strictly interior starting trajectory")
        if d.n_c:
            cx = np.asarray(spec.c(x, u))
            if np.any(cx >= 0):
                j = int(np.argmax(cx))
                raise InfeasibleStartError(
                    f"mixed constraint {j} is violated at node {i} "
                    f"(t={t:.6g}, value {cx[j]:.3e}); the primal method "
                    "needs a strictly interior starting trajectory")


def run_primal(spec: OcpSpec, guess, config: Optional[ContinuationConfig] = None,
               options: Optional[SolverOptions] = None, system=None):
    """Barrier continuation on the penalized stationarity system.

    Returns (solution, (lam_g, lam_c), report) where the inequality
    multipliers are recovered from the barrier relation at the final
    epsilon. The guess must be strictly interior for every path and mixed
    constraint.
    """
    config = config or ContinuationConfig()
    _check_interior_guess(spec, guess)
    if system is None:
        system = transcription.primal_system(spec)
    solution, report = _run(system, guess, config, options, "primal")
    multipliers = transcription.recover_multipliers(
        spec, solution, report.eps_schedule[-1])
    return solution, multipliers, report


def run_primal_dual(spec: OcpSpec, guess,
                    config: Optional[ContinuationConfig] = None,
                    options: Optional[SolverOptions] = None, system=None):
    """Continuation on the complementarity-smoothed stationarity system.

    Returns (solution, report). Defined for any finite guess; the
    multiplier trajectories are components of the solution itself.
    """
    config = config or ContinuationConfig()
    if system is None:
        system = transcription.primal_dual_system(spec)
    return _run(system, guess, config, options, "primal-dual")
