"""Benchmark problem library: Van der Pol, Zermelo navigation, Goddard ascent.

Each constructor returns a bundle holding the fixed-horizon problem spec,
per-method starting trajectories and continuation settings, and the
published performance figures used for comparison tables. The bundle names
double as the CLI registry keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Dict, Optional

import numpy as np

from .bvpdae import DaeSolution, Mesh, SolverOptions
from .continuation import ContinuationConfig
from .ocp import OcpDims, OcpSpec, to_fixed_time

__all__ = ["BenchmarkBundle", "vdp", "zermelo", "goddard", "REGISTRY"]


@dataclass
class BenchmarkBundle:
    name: str
    spec: OcpSpec
    original: OcpSpec
    config_primal: ContinuationConfig
    config_primal_dual: ContinuationConfig
    solver_options: SolverOptions
    reference_stats: Dict[str, Dict]
    notes: str = ""
    _guess_data: Dict = dc_field(default_factory=dict, repr=False)

    def config(self, method: str) -> ContinuationConfig:
        if method == "primal":
            return self.config_primal
        if method == "primal-dual":
            return self.config_primal_dual
        raise ValueError(f"unknown method {method!r}")

    def make_guess(self, method: str) -> DaeSolution:
        """Fresh starting trajectory for the given method.

        The primal and primal-dual guesses may differ in the state path
        (an interior detour versus the direct line) and in the algebraic
        width (the primal-dual system carries multiplier unknowns,
        initialized to zero).
        """
        nodes, X, P, U = self._guess_data[
            "primal" if method == "primal" else "primal-dual"]
        mesh = Mesh(nodes)
        d = self.spec.dims
        Y = np.hstack([X, P])
        if method == "primal":
            Z = U.copy()
        elif method == "primal-dual":
            Z = np.hstack([U, np.zeros((nodes.size, d.n_g + d.n_c))])
        else:
            raise ValueError(f"unknown method {method!r}")
        return DaeSolution(
            mesh=mesh, Y=Y, Z_nodes=Z, Z_mid=0.5 * (Z[:-1] + Z[1:]),
            params=np.zeros(d.n_h))


def _const(nodes, values):
    return np.tile(np.asarray(values, dtype=float), (nodes.size, 1))


def vdp() -> BenchmarkBundle:
    """Constrained Van der Pol oscillator on a fixed horizon of 4.

    Quadratic cost, lower bound on the second state, symmetric control
    bounds, and a circular terminal manifold.
    """

    def f(x, u):
        return np.array([x[1], -x[0] + x[1] * (1.0 - x[0] ** 2) + u[0]])

    def f_x(x, u):
        return np.array([[0.0, 1.0],
                         [-1.0 - 2.0 * x[0] * x[1], 1.0 - x[0] ** 2]])

    def f_u(x, u):
        return np.array([[0.0], [1.0]])

    spec = OcpSpec(
        dims=OcpDims(n=2, m=1, n_g=1, n_c=2, n_h=3),
        T=4.0,
        f=f, f_x=f_x, f_u=f_u,
        l=lambda x, u: x[0] ** 2 + x[1] ** 2 + u[0] ** 2,
        l_x=lambda x, u: np.array([2.0 * x[0], 2.0 * x[1]]),
        l_u=lambda x, u: np.array([2.0 * u[0]]),
        g=lambda x: np.array([-0.4 - x[1]]),
        g_x=lambda x: np.array([[0.0, -1.0]]),
        c=lambda x, u: np.array([u[0] - 1.0, -1.0 - u[0]]),
        c_x=lambda x, u: np.zeros((2, 2)),
        c_u=lambda x, u: np.array([[1.0], [-1.0]]),
        h=lambda x0, xT: np.array([
            x0[0] - 1.0, x0[1] - 1.0,
            xT[0] ** 2 + xT[1] ** 2 - 0.04]),
        h_x0=lambda x0, xT: np.array([
            [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
        h_xT=lambda x0, xT: np.array([
            [0.0, 0.0], [0.0, 0.0], [2.0 * xT[0], 2.0 * xT[1]]]),
        name="vdp",
    )

    nodes = np.linspace(0.0, 4.0, 41)
    X = _const(nodes, [1.0, 1.0])
    P = _const(nodes, [0.0, 0.0])
    U = _const(nodes, [0.0])
    guesses = {"primal": (nodes, X, P, U), "primal-dual": (nodes, X, P, U)}

    return BenchmarkBundle(
        name="vdp",
        spec=spec,
        original=spec,
        config_primal=ContinuationConfig(eps0=1.0, alpha=0.35, tol=1e-7),
        config_primal_dual=ContinuationConfig(eps0=1.0, alpha=1e-7, tol=1e-7),
        solver_options=SolverOptions(),
        reference_stats={
            "primal": {"alpha": 0.35, "eps_iterations": 17,
                       "final_mesh_len": 812, "exec_time_s": 2.55},
            "primal-dual": {"alpha": 1e-7, "eps_iterations": 2,
                            "final_mesh_len": 797, "exec_time_s": 1.92},
        },
        notes=("Path bound applies to the second state (-0.4 - x2 <= 0); "
               "control bounds are the symmetric interval [-1, 1]."),
        _guess_data=guesses,
    )


def _zermelo_drift(x2):
    return 3.0 + x2 * (1.0 - x2) / 5.0


def zermelo() -> BenchmarkBundle:
    """Minimum-time navigation across a drift field around an elliptic obstacle.

    Authored as a free-horizon problem and rewritten on [0, 1] with the
    horizon as a third state; heading and speed are bounded controls.
    """
    two_pi = 2.0 * math.pi

    def f(x, u):
        return np.array([u[1] * np.cos(u[0]) + _zermelo_drift(x[1]),
                         u[1] * np.sin(u[0])])

    def f_x(x, u):
        return np.array([[0.0, (1.0 - 2.0 * x[1]) / 5.0], [0.0, 0.0]])

    def f_u(x, u):
        return np.array([[-u[1] * np.sin(u[0]), np.cos(u[0])],
                         [u[1] * np.cos(u[0]), np.sin(u[0])]])

    def g(x):
        return np.array([4.0 - (x[0] - 10.0) ** 2 / 4.0
                         - (x[1] - 0.4) ** 2 / 1e-2])

    def g_x(x):
        return np.array([[-(x[0] - 10.0) / 2.0, -200.0 * (x[1] - 0.4)]])

    free = OcpSpec(
        dims=OcpDims(n=2, m=2, n_g=1, n_c=4, n_h=4),
        T=None, free_time=True,
        f=f, f_x=f_x, f_u=f_u,
        l=lambda x, u: 1.0,
        l_x=lambda x, u: np.zeros(2),
        l_u=lambda x, u: np.zeros(2),
        g=g, g_x=g_x,
        c=lambda x, u: np.array([u[0] - two_pi, -u[0], u[1] - 1.0, -u[1]]),
        c_x=lambda x, u: np.zeros((4, 2)),
        c_u=lambda x, u: np.array([[1.0, 0.0], [-1.0, 0.0],
                                   [0.0, 1.0], [0.0, -1.0]]),
        h=lambda x0, xT: np.array([x0[0], x0[1], xT[0] - 20.0, xT[1] - 1.0]),
        h_x0=lambda x0, xT: np.array([[1.0, 0.0], [0.0, 1.0],
                                      [0.0, 0.0], [0.0, 0.0]]),
        h_xT=lambda x0, xT: np.array([[0.0, 0.0], [0.0, 0.0],
                                      [1.0, 0.0], [0.0, 1.0]]),
        name="zermelo",
    )
    spec = to_fixed_time(free)

    nodes = np.linspace(0.0, 1.0, 101)
    # direct line from (0,0) to (20,1); cuts straight through the obstacle
    x_line = np.column_stack([20.0 * nodes, nodes])
    # interior detour passing above the obstacle with a comfortable margin
    bks = np.array([0.0, 0.2, 0.8, 1.0])
    bx1 = np.array([0.0, 4.0, 16.0, 20.0])
    bx2 = np.array([0.0, 0.8, 0.8, 1.0])
    x_detour = np.column_stack([np.interp(nodes, bks, bx1),
                                np.interp(nodes, bks, bx2)])
    P = _const(nodes, [0.0, 0.0, 1.0])
    U = _const(nodes, [math.pi / 2.0, 0.5])
    X_primal = np.column_stack([x_detour, np.full(nodes.size, 20.0)])
    X_pd = np.column_stack([x_line, np.full(nodes.size, 20.0)])
    guesses = {"primal": (nodes, X_primal, P, U),
               "primal-dual": (nodes, X_pd, P, U)}

    return BenchmarkBundle(
        name="zermelo",
        spec=spec,
        original=free,
        config_primal=ContinuationConfig(eps0=0.1, alpha=0.9, tol=2e-5),
        config_primal_dual=ContinuationConfig(eps0=0.1, alpha=0.5, tol=1e-7),
        solver_options=SolverOptions(),
        reference_stats={
            "primal": {"alpha": 0.9, "eps_iterations": 82,
                       "final_mesh_len": 496, "exec_time_s": 34.83},
            "primal-dual": {"alpha": 0.5, "eps_iterations": 21,
                            "final_mesh_len": 132, "exec_time_s": 4.99},
        },
        notes=("The primal starting path is an interior detour above the "
               "obstacle (the direct line is infeasible and only usable by "
               "the primal-dual method)."),
        _guess_data=guesses,
    )


def _goddard_drag(h, v):
    return 310.0 * v * v * np.exp(500.0 * (1.0 - h))


def goddard() -> BenchmarkBundle:
    """Maximum-velocity-integral rocket ascent with a dynamic-pressure limit.

    States are altitude, speed and mass; thrust is bounded and the burn
    time is free (rewritten on [0, 1] with the horizon as a fourth state).
    The optimal thrust shows a bang arc, a singular arc, a pressure-limited
    arc and a final coast.
    """

    def f(x, u):
        h, v, m = x
        return np.array([v,
                         (u[0] - _goddard_drag(h, v)) / m - 1.0 / h ** 2,
                         -2.0 * u[0]])

    def f_x(x, u):
        h, v, m = x
        d = _goddard_drag(h, v)
        d_h = -500.0 * d
        d_v = 620.0 * v * np.exp(500.0 * (1.0 - h))
        return np.array([
            [0.0, 1.0, 0.0],
            [-d_h / m + 2.0 / h ** 3, -d_v / m, -(u[0] - d) / m ** 2],
            [0.0, 0.0, 0.0]])

    def f_u(x, u):
        return np.array([[0.0], [1.0 / x[2]], [-2.0]])

    def g(x):
        return np.array([20.0 * _goddard_drag(x[0], x[1]) - 10.0])

    def g_x(x):
        h, v, _ = x
        d = _goddard_drag(h, v)
        return np.array([[20.0 * (-500.0 * d),
                          20.0 * 620.0 * v * np.exp(500.0 * (1.0 - h)),
                          0.0]])

    free = OcpSpec(
        dims=OcpDims(n=3, m=1, n_g=1, n_c=2, n_h=4),
        T=None, free_time=True,
        f=f, f_x=f_x, f_u=f_u,
        l=lambda x, u: -x[1],
        l_x=lambda x, u: np.array([0.0, -1.0, 0.0]),
        l_u=lambda x, u: np.zeros(1),
        g=g, g_x=g_x,
        c=lambda x, u: np.array([u[0] - 3.5, -u[0]]),
        c_x=lambda x, u: np.zeros((2, 3)),
        c_u=lambda x, u: np.array([[1.0], [-1.0]]),
        h=lambda x0, xT: np.array([x0[0] - 1.0, x0[1], x0[2] - 1.0,
                                   xT[2] - 0.6]),
        h_x0=lambda x0, xT: np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                                      [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]),
        h_xT=lambda x0, xT: np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0],
                                      [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
        name="goddard",
    )
    spec = to_fixed_time(free)

    nodes = np.linspace(0.0, 1.0, 101)
    X = _const(nodes, [1.2, 0.05, 1.0, 0.3])
    P = _const(nodes, [0.0, 1.0, 0.0, 0.0])
    # thrust guess: mid-range constant, strictly inside [0, 3.5]
    U = _const(nodes, [1.0])
    guesses = {"primal": (nodes, X, P, U), "primal-dual": (nodes, X, P, U)}

    return BenchmarkBundle(
        name="goddard",
        spec=spec,
        original=free,
        config_primal=ContinuationConfig(eps0=0.1, alpha=0.6, tol=1e-7),
        config_primal_dual=ContinuationConfig(eps0=0.1, alpha=0.25, tol=1e-7),
        solver_options=SolverOptions(),
        reference_stats={
            "primal": {"alpha": 0.6, "eps_iterations": 29,
                       "final_mesh_len": 722, "exec_time_s": 16.14},
            "primal-dual": {"alpha": 0.25, "eps_iterations": 11,
                            "final_mesh_len": 501, "exec_time_s": 4.11},
        },
        notes=("Dynamic-pressure limit evaluates the drag at (altitude, "
               "speed); the thrust guess is an interior constant."),
        _guess_data=guesses,
    )


REGISTRY = {"vdp": vdp, "zermelo": zermelo, "goddard": goddard}
